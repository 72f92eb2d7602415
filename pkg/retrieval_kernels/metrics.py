"""
Retrieval evaluation metrics and trec-style run/qrels files.

Qrels lines are whitespace separated::

    query_id iteration doc_id grade

``iteration`` is ignored and ``grade`` is a non-negative integer; a grade
above zero counts as relevant.

Run lines are whitespace separated::

    query_id doc_id rank score tag

with 1-based ranks. The six-column form with a literal ``Q0`` in the second
column is accepted on read. Runs are written with scores to six decimals so
that identical runs produce identical bytes.

Averages cover queries that are present in the run and have at least one
relevant judgment. Queries outside that set are counted in the diagnostics.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Sequence

from .errors import InvalidInput
from .index import ScoredHit, rank_hits

logger = logging.getLogger(__name__)

Qrels = Dict[str, Dict[str, int]]
Run = Dict[str, List[ScoredHit]]

DEFAULT_NDCG_K = 10
DEFAULT_RECALL_K = 5
DEFAULT_MATCH_K = 5
RUN_SCORE_DECIMALS = 6


@dataclass
class Diagnostics:
    evaluated: int = 0
    not_in_qrels: int = 0
    no_relevant: int = 0
    not_in_run: int = 0


@dataclass
class EvaluationReport:
    metrics: Dict[str, float]
    per_query: Dict[str, Dict[str, float]]
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def to_dict(self) -> Dict:
        return {
            "metrics": {k: round(v, 6) for k, v in self.metrics.items()},
            "diagnostics": {
                "evaluated": self.diagnostics.evaluated,
                "not_in_qrels": self.diagnostics.not_in_qrels,
                "no_relevant": self.diagnostics.no_relevant,
                "not_in_run": self.diagnostics.not_in_run,
            },
        }


def validate_run(run: Mapping[str, Sequence[ScoredHit]]) -> None:
    for qid, hits in run.items():
        seen = set()
        for prev, hit in zip([None, *hits], hits):
            if hit.doc_id in seen:
                raise InvalidInput(f"query {qid!r}: document {hit.doc_id!r} ranked twice")
            seen.add(hit.doc_id)
            if prev is not None and hit.score > prev.score:
                raise InvalidInput(f"query {qid!r}: scores increase at {hit.doc_id!r}")


def _per_query(
    run: Mapping[str, Sequence[ScoredHit]],
    qrels: Mapping[str, Mapping[str, int]],
    fn: Callable[[List[str], Mapping[str, int]], float],
):
    values = {}
    diag = Diagnostics()
    for qid, hits in run.items():
        grades = qrels.get(qid)
        if grades is None:
            diag.not_in_qrels += 1
            continue
        if not any(g > 0 for g in grades.values()):
            diag.no_relevant += 1
            continue
        values[qid] = fn([h.doc_id for h in hits], grades)
    diag.evaluated = len(values)
    diag.not_in_run = sum(
        1 for qid, grades in qrels.items()
        if qid not in run and any(g > 0 for g in grades.values())
    )
    return values, diag


def _mean(values: Mapping[str, float]) -> float:
    return sum(values.values()) / len(values) if values else 0.0


def dcg(gains: Sequence[int]) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(r + 1) for r, g in enumerate(gains, start=1))


def query_ndcg(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    ideal = dcg(sorted(grades.values(), reverse=True)[:k])
    if ideal == 0.0:
        return 0.0
    return dcg([grades.get(d, 0) for d in ranking[:k]]) / ideal


def _relevant(grades: Mapping[str, int]) -> set:
    return {d for d, g in grades.items() if g > 0}


def query_recall(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    relevant = _relevant(grades)
    return len(relevant.intersection(ranking[:k])) / len(relevant)


def query_match(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    relevant = _relevant(grades)
    return 1.0 if relevant.intersection(ranking[:k]) else 0.0


def _check_k(k: int) -> None:
    if k < 1:
        raise InvalidInput("k must be at least 1")


def per_query_ndcg(run, qrels, k: int = DEFAULT_NDCG_K) -> Dict[str, float]:
    _check_k(k)
    return _per_query(run, qrels, lambda r, g: query_ndcg(r, g, k))[0]


def ndcg_at_k(run, qrels, k: int = DEFAULT_NDCG_K) -> float:
    return _mean(per_query_ndcg(run, qrels, k))


def recall_at_k(run, qrels, k: int = DEFAULT_RECALL_K) -> float:
    _check_k(k)
    return _mean(_per_query(run, qrels, lambda r, g: query_recall(r, g, k))[0])


def match_at_k(run, qrels, k: int = DEFAULT_MATCH_K) -> float:
    _check_k(k)
    return _mean(_per_query(run, qrels, lambda r, g: query_match(r, g, k))[0])


def accuracy_at_1(run, qrels) -> float:
    return match_at_k(run, qrels, k=1)


def evaluate(
    run,
    qrels,
    ndcg_k: int = DEFAULT_NDCG_K,
    recall_k: int = DEFAULT_RECALL_K,
    match_k: int = DEFAULT_MATCH_K,
) -> EvaluationReport:
    for k in (ndcg_k, recall_k, match_k):
        _check_k(k)
    measures = {
        f"ndcg@{ndcg_k}": lambda r, g: query_ndcg(r, g, ndcg_k),
        f"recall@{recall_k}": lambda r, g: query_recall(r, g, recall_k),
        f"match@{match_k}": lambda r, g: query_match(r, g, match_k),
        "accuracy@1": lambda r, g: query_match(r, g, 1),
    }
    metrics, per_query, diag = {}, {}, Diagnostics()
    for name, fn in measures.items():
        values, diag = _per_query(run, qrels, fn)
        metrics[name] = _mean(values)
        per_query[name] = values
    if diag.not_in_qrels or diag.no_relevant:
        logger.info(
            "skipped %d queries absent from qrels and %d without relevant documents",
            diag.not_in_qrels, diag.no_relevant,
        )
    return EvaluationReport(metrics, per_query, diag)


def read_qrels(path: str) -> Qrels:
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise InvalidInput(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, doc_id, grade = parts
            try:
                grade = int(grade)
            except ValueError:
                raise InvalidInput(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if grade < 0:
                raise InvalidInput(f"{path}:{lineno}: negative grade")
            judged = qrels.setdefault(qid, {})
            if doc_id in judged:
                raise InvalidInput(f"{path}:{lineno}: duplicate judgment for {qid} {doc_id}")
            judged[doc_id] = grade
    return qrels


def write_qrels(path: str, qrels: Mapping[str, Mapping[str, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid, grades in qrels.items():
            for doc_id, grade in grades.items():
                f.write(f"{qid} 0 {doc_id} {grade}\n")


def read_run(path: str) -> Run:
    rows: Dict[str, List] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) == 6 and parts[1] == "Q0":
                parts = [parts[0], *parts[2:]]
            if len(parts) != 5:
                raise InvalidInput(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            qid, doc_id, rank, score, _ = parts
            try:
                rows.setdefault(qid, []).append((int(rank), doc_id, float(score)))
            except ValueError:
                raise InvalidInput(f"{path}:{lineno}: bad rank or score") from None
    run = {
        qid: [ScoredHit(doc_id, score) for _, doc_id, score in sorted(entries, key=lambda e: e[0])]
        for qid, entries in rows.items()
    }
    validate_run(run)
    return run


def format_run(run: Mapping[str, Sequence[ScoredHit]], tag: str = "run") -> str:
    lines = []
    for qid, hits in run.items():
        for rank, hit in enumerate(hits, start=1):
            lines.append(f"{qid} {hit.doc_id} {rank} {hit.score:.{RUN_SCORE_DECIMALS}f} {tag}\n")
    return "".join(lines)


def write_run(path: str, run: Mapping[str, Sequence[ScoredHit]], tag: str = "run") -> None:
    """Hits go out in order of their printed scores, ties by doc_id, so a run
    file read back and re-ranked keeps its order."""
    validate_run(run)
    run = {
        qid: rank_hits([ScoredHit(h.doc_id, round(h.score, RUN_SCORE_DECIMALS)) for h in hits])
        for qid, hits in run.items()
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_run(run, tag))
