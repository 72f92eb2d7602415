"""
Retrieve-and-rerank orchestration and hard-negative mining.

A reranker scores a (query tokens, document tokens) pair. Shipped rerankers
are deterministic: token overlap, a qrels-backed oracle, and an identity
reranker that keeps the first-stage score.

Mined negatives are written one JSON object per line::

    {"query_id": "q-1", "positive_id": "doc-7", "negatives": ["doc-3", ...]}
"""
import logging
from collections import Counter
from typing import Collection, Dict, Iterable, List, Mapping, Sequence

from pydantic import Field, model_validator

from .corpus import DEFAULT_MAX_QUERY_TOKENS, truncate_query
from .errors import InvalidConfig, InvalidInput
from .index import ScoredHit, VectorIndex, rank_hits
from .math_kernels import Embedding
from .utils import KernelConfig, write_jsonl

logger = logging.getLogger(__name__)

DEFAULT_RETRIEVE_K = 20


class MiningConfig(KernelConfig):
    margin: float = Field(0.95, gt=0, le=1)
    retrieve_k: int = Field(DEFAULT_RETRIEVE_K, ge=1)
    keep_n: int = Field(8, ge=1)
    # True: candidates above margin * positive similarity are dropped as likely
    # false negatives. False keeps only those above it.
    exclude_above: bool = True

    @model_validator(mode="after")
    def _check_counts(self):
        if self.keep_n > self.retrieve_k:
            raise ValueError(f"keep_n ({self.keep_n}) exceeds retrieve_k ({self.retrieve_k})")
        return self


class Reranker:
    """Scores query/document token pairs. Implementations must be thread-safe."""

    name = "base"

    def score(self, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> float:
        raise NotImplementedError

    def rescore(
        self,
        query_tokens: Sequence[str],
        hits: Sequence[ScoredHit],
        doc_tokens: Mapping[str, Sequence[str]],
    ) -> List[ScoredHit]:
        out = []
        for hit in hits:
            if hit.doc_id not in doc_tokens:
                raise InvalidInput(f"no tokens for document {hit.doc_id!r}")
            out.append(ScoredHit(hit.doc_id, float(self.score(query_tokens, doc_tokens[hit.doc_id]))))
        return out


class OverlapReranker(Reranker):
    """Size of the multiset intersection of query and document tokens."""

    name = "overlap"

    def __init__(self, lowercase: bool = False):
        self.lowercase = lowercase

    def _count(self, tokens: Sequence[str]) -> Counter:
        if self.lowercase:
            return Counter(t.lower() for t in tokens)
        return Counter(tokens)

    def score(self, query_tokens, doc_tokens) -> float:
        return float(sum((self._count(query_tokens) & self._count(doc_tokens)).values()))


class IdentityReranker(Reranker):
    """Keeps the first-stage score, so reranking reproduces the retrieval order."""

    name = "identity"

    def rescore(self, query_tokens, hits, doc_tokens):
        return list(hits)


class OracleReranker(Reranker):
    """Scores each candidate with its relevance grade for the current query."""

    name = "oracle"

    def __init__(self, grades: Mapping[str, int]):
        self.grades = dict(grades)

    def rescore(self, query_tokens, hits, doc_tokens):
        return [ScoredHit(h.doc_id, float(self.grades.get(h.doc_id, 0))) for h in hits]


def retrieve_rerank(
    query_tokens: Sequence[str],
    query_embedding: Embedding,
    index: VectorIndex,
    reranker: Reranker,
    doc_tokens: Mapping[str, Sequence[str]],
    retrieve_k: int = DEFAULT_RETRIEVE_K,
    max_query_tokens: int = DEFAULT_MAX_QUERY_TOKENS,
) -> List[ScoredHit]:
    """Top ``retrieve_k`` from the index, rescored by ``reranker``.

    The query is truncated to ``max_query_tokens`` before the reranker sees it.
    """
    candidates = index.top_k(query_embedding, retrieve_k)
    return rerank_hits(query_tokens, candidates, reranker, doc_tokens, max_query_tokens)


def rerank_hits(
    query_tokens: Sequence[str],
    candidates: Sequence[ScoredHit],
    reranker: Reranker,
    doc_tokens: Mapping[str, Sequence[str]],
    max_query_tokens: int = DEFAULT_MAX_QUERY_TOKENS,
) -> List[ScoredHit]:
    truncated = truncate_query(query_tokens, max_query_tokens)
    return rank_hits(reranker.rescore(truncated, candidates, doc_tokens))


def mine_hard_negatives(
    query_tokens: Sequence[str],
    query_embedding: Embedding,
    positive_id: str,
    index: VectorIndex,
    reranker: Reranker,
    doc_tokens: Mapping[str, Sequence[str]],
    cfg: MiningConfig,
    max_query_tokens: int = DEFAULT_MAX_QUERY_TOKENS,
    exclude_ids: Collection[str] = (),
) -> List[str]:
    """Hard negatives for one (query, positive) pair.

    Retrieve ``retrieve_k`` candidates, drop the positive and every id in
    ``exclude_ids`` (the query's other relevant documents), drop candidates on
    the wrong side of ``margin * cos(q, positive)``, rerank the survivors and
    keep the best ``keep_n``.
    """
    if positive_id not in index:
        raise InvalidInput(f"positive {positive_id!r} is not in the index")
    threshold = cfg.margin * index.similarity(query_embedding, positive_id)
    excluded = {positive_id, *exclude_ids}
    candidates = [
        h for h in index.top_k(query_embedding, cfg.retrieve_k) if h.doc_id not in excluded
    ]
    if cfg.exclude_above:
        survivors = [h for h in candidates if h.score <= threshold]
    else:
        survivors = [h for h in candidates if h.score > threshold]
    logger.debug(
        "positive %s: threshold %.6f, %d of %d candidates survive",
        positive_id, threshold, len(survivors), len(candidates),
    )
    ranked = rerank_hits(query_tokens, survivors, reranker, doc_tokens, max_query_tokens)
    return [h.doc_id for h in ranked[:cfg.keep_n]]


def write_negatives(path: str, records: Iterable[Dict]) -> int:
    return write_jsonl(path, (
        {
            "query_id": r["query_id"],
            "positive_id": r["positive_id"],
            "negatives": list(r["negatives"]),
        }
        for r in records
    ))


RERANKERS = {
    OverlapReranker.name: OverlapReranker,
    IdentityReranker.name: IdentityReranker,
}


def register_reranker(name: str, factory) -> None:
    assert name not in RERANKERS, f"reranker {name!r} already registered"
    RERANKERS[name] = factory


def make_reranker(name: str) -> Reranker:
    if name not in RERANKERS:
        raise InvalidConfig(f"unknown reranker {name!r}; known: {sorted(RERANKERS)}")
    return RERANKERS[name]()
