import json
import logging
import os
from typing import Any, Dict, Iterable, Iterator, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError

from .errors import InvalidConfig, InvalidInput

ENDPOINT_ENV = "RETRIEVAL_KERNELS_ENDPOINT"
TOKEN_ENV = "RETRIEVAL_KERNELS_TOKEN"


class KernelConfig(BaseModel):
    """Frozen pydantic base for every configuration record.

    Validation problems are re-raised as ``InvalidConfig`` so callers only deal
    with the package's own error types.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise InvalidConfig(
                f"{type(self).__name__}: {e.errors(include_url=False)}"
            ) from e


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def endpoint_from_env(default: str | None) -> str | None:
    return os.environ.get(ENDPOINT_ENV) or default


def auth_headers() -> Dict[str, str]:
    headers = {
        "Accept": "application/json",
        "User-Agent": "retrieval-kernels",
    }
    if TOKEN_ENV in os.environ:
        headers["Authorization"] = f"Bearer {os.environ[TOKEN_ENV]}"
    return headers


def raise_json_for_status(response):
    try:
        response.raise_for_status()
    except Exception as exc:
        try:
            body = response.json()
        except ValueError:
            body = response.text
        exc.args = exc.args + (body, )
        raise exc.with_traceback(exc.__traceback__)


def load_yaml(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise InvalidConfig(f"{path}: not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: expected a key-value mapping")
    return data


def read_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield ``(line_number, record)`` for every non-blank line of ``path``."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise InvalidInput(f"{path}:{lineno}: malformed record: {e.msg}") from e
            if not isinstance(record, dict):
                raise InvalidInput(f"{path}:{lineno}: record must be an object")
            yield lineno, record


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, separators=(", ", ": ")))
            f.write("\n")
            count += 1
    return count


def require_keys(request: Dict[str, Any], *keys: str) -> None:
    missing = [k for k in keys if request.get(k) in (None, "")]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise InvalidConfig(f"{request.get('action', 'request')}: missing {flags}")


def require_files(request: Dict[str, Any], *keys: str) -> None:
    require_keys(request, *keys)
    for k in keys:
        if not os.path.isfile(request[k]):
            raise InvalidInput(f"{k}: no such file {request[k]!r}")
