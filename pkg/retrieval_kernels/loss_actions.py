"""
The ``loss`` action: evaluate losses and gradients on batches read from disk.

Each line of ``--batch`` is one JSON object with a ``kind``:

    {"kind": "contrastive", "queries": [[...], ...], "passages": [[[...], ...], ...],
     "tau": 0.05, "alpha": 1, "beta": 1, "gamma": 1}
    {"kind": "distillation", "student": [[...], ...], "teacher": [[...], ...], "tau_kd": 1.0}
    {"kind": "plistmle", "scores": [...], "target_order": [...], "weighting": "exponential"}

``target_order`` may be replaced by ``labels`` (graded relevance per item).
The output has one line per input line with ``kind``, ``value``, ``grad`` and,
where defined, ``per_item``.
"""
import json
from typing import Any, Dict

import numpy as np

from .errors import InvalidInput
from .math_kernels import (
    ContrastiveConfig,
    Embedding,
    LossResult,
    TrainingBatch,
    contrastive_loss,
    distillation_loss,
    order_from_labels,
    plistmle_loss,
)
from .utils import read_jsonl, require_files, write_jsonl

HELP = {
    "loss": "evaluate losses and gradients on line-delimited batches",
}

DEFAULTS = {
    "loss": {"output": None},
}

KINDS = ("contrastive", "distillation", "plistmle")


def add_arguments(parser, action: str) -> None:
    parser.add_argument("--batch", help="line-delimited batches, one loss evaluation each")
    parser.add_argument("--output", help="where to write results (stdout)")


def check(request: Dict[str, Any]) -> None:
    assert request["action"] == "loss", f"Unknown action {request['action']}"
    require_files(request, "batch")


def _field(record: Dict[str, Any], key: str):
    if key not in record:
        raise InvalidInput(f"missing {key!r}")
    return record[key]


def _contrastive(record) -> LossResult:
    cfg = ContrastiveConfig(**{k: record[k] for k in ("tau", "alpha", "beta", "gamma") if k in record})
    batch = TrainingBatch(
        queries=[Embedding(q) for q in _field(record, "queries")],
        passages=[[Embedding(p) for p in plist] for plist in _field(record, "passages")],
    )
    return contrastive_loss(batch, cfg)


def _distillation(record) -> LossResult:
    return distillation_loss(
        _field(record, "student"),
        _field(record, "teacher"),
        record.get("tau_kd", 1.0),
    )


def _plistmle(record) -> LossResult:
    scores = _field(record, "scores")
    if "target_order" in record:
        order = record["target_order"]
    else:
        order = order_from_labels(_field(record, "labels"))
    return plistmle_loss(scores, order, weighting=record.get("weighting", "exponential"))


_EVALUATORS = {"contrastive": _contrastive, "distillation": _distillation, "plistmle": _plistmle}


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def evaluate_record(record: Dict[str, Any], where: str = "batch") -> Dict[str, Any]:
    kind = record.get("kind")
    if kind not in KINDS:
        raise InvalidInput(f"{where}: kind must be one of {', '.join(KINDS)}, got {kind!r}")
    try:
        result = _EVALUATORS[kind](record)
    except InvalidInput as e:
        raise InvalidInput(f"{where}: {e}") from e
    out = {"kind": kind, "value": result.value, "grad": _plain(result.grad)}
    if result.per_item is not None:
        out["per_item"] = _plain(result.per_item)
    return out


def run(request: Dict[str, Any]) -> None:
    path = request["batch"]
    results = [evaluate_record(record, f"{path}:{lineno}") for lineno, record in read_jsonl(path)]
    if request.get("output"):
        write_jsonl(request["output"], results)
        print(f"wrote {len(results)} loss evaluations to {request['output']}", flush=True)
    else:
        for result in results:
            print(json.dumps(result, separators=(", ", ": ")), flush=True)
