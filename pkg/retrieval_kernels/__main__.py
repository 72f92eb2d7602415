import argparse
import glob
import logging
import os
import sys
from typing import Any, Dict, List

from retrieval_kernels import get_actions, register_actions
from retrieval_kernels.errors import InvalidConfig, RetrievalKernelError
from retrieval_kernels.utils import configure_logging, load_yaml

logger = logging.getLogger("retrieval_kernels")

IO_EXIT_STATUS = 7
INTERNAL_EXIT_STATUS = 1
# argparse destinations that are not request keys
_RESERVED = {"command", "config", "verbose", "mode", "directory"}


def _get_task_files(directory: str) -> List[str]:
    return sorted(
        list(glob.glob(os.path.join(directory, "*.yml")))
        + list(glob.glob(os.path.join(directory, "*.yaml")))
    )


def build_parser():
    """Parser with one subcommand per registered action plus ``requests``.

    Also returns, per action, the request keys its flags may set.
    """
    parser = argparse.ArgumentParser(
        prog="retrieval_kernels",
        description="Retrieval, reranking and training-loss kernels.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    known = {}
    for name, module in sorted(get_actions().items()):
        p = sub.add_parser(name, help=module.HELP[name], description=module.HELP[name])
        p.add_argument("--config", help="YAML file whose keys mirror the flags")
        p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
        module.add_arguments(p, name)
        known[name] = {a.dest for a in p._actions if a.dest not in _RESERVED | {"help"}}

    p = sub.add_parser("requests", help="check or run a directory of YAML requests")
    p.add_argument("mode", choices=["check", "run"])
    p.add_argument("directory", nargs="?", default="requests")
    p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    return parser, known


def build_request(
    action: str,
    known: Dict[str, set],
    config: Dict[str, Any] | None = None,
    flags: Dict[str, Any] | None = None,
) -> Dict[str, Any]:
    """Merge action defaults, then config file values, then flags that were given."""
    actions = get_actions()
    if action not in actions:
        raise InvalidConfig(f"unknown action {action!r}")
    config = dict(config or {})
    if config.pop("action", action) != action:
        raise InvalidConfig(f"config is for another action than {action!r}")

    defaults = actions[action].DEFAULTS[action]
    allowed = known[action] | set(defaults)
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise InvalidConfig(f"{action}: unknown config keys {', '.join(unknown)}")

    request = {k: None for k in known[action]}
    request.update(defaults)
    request.update(config)
    request.update({k: v for k, v in (flags or {}).items() if v is not None})
    request["action"] = action
    return request


def _load_requests(directory: str, known) -> List[Dict[str, Any]]:
    if not os.path.isdir(directory):
        raise InvalidConfig(f"no requests directory {directory!r}")
    strays = [
        f for f in glob.glob(os.path.join(directory, "*"))
        if not (f.endswith(".yaml") or f.endswith(".yml"))
    ]
    if strays:
        raise InvalidConfig(
            f"found non-YAML files ({', '.join(sorted(strays))}) in {directory!r}; "
            "use only requests with filename extensions `.yml` or `.yaml`"
        )

    requests = []
    for filename in _get_task_files(directory):
        data = load_yaml(filename)
        if "action" not in data:
            raise InvalidConfig(f"{filename}: request has no action")
        requests.append((filename, build_request(data["action"], known, data)))
    return requests


def process_requests(directory: str, known, check_only: bool) -> None:
    requests = _load_requests(directory, known)
    actions = get_actions()
    for filename, request in requests:
        actions[request["action"]].check(request)
        print(f"checked {filename}: {request['action']}", flush=True)
    if check_only:
        return
    for filename, request in requests:
        print(f"working on {filename}", flush=True)
        actions[request["action"]].run(request)


def main(argv=None) -> int:
    register_actions()
    parser, known = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        if args.command == "requests":
            process_requests(args.directory, known, args.mode == "check")
            return 0
        config = load_yaml(args.config) if args.config else None
        flags = {k: v for k, v in vars(args).items() if k not in _RESERVED}
        request = build_request(args.command, known, config, flags)
        module = get_actions()[args.command]
        module.check(request)
        module.run(request)
    except RetrievalKernelError as e:
        logger.debug("action failed", exc_info=True)
        print(e.one_line(), file=sys.stderr, flush=True)
        return e.exit_status
    except OSError as e:
        logger.debug("action failed", exc_info=True)
        print(f"error: IO: {' '.join(str(e).split())}", file=sys.stderr, flush=True)
        return IO_EXIT_STATUS
    except Exception as e:
        logger.debug("action failed", exc_info=True)
        print(f"error: INTERNAL: {e!r}", file=sys.stderr, flush=True)
        return INTERNAL_EXIT_STATUS
    return 0


if __name__ == "__main__":
    sys.exit(main())
