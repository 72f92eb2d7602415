"""Exact in-memory vector store with batched top-k cosine retrieval."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from threading import RLock
from typing import Dict, List, Sequence

import numpy as np

from .embedder import cache_read, cache_write
from .errors import InvalidInput
from .math_kernels import Embedding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredHit:
    doc_id: str
    score: float


def rank_hits(hits: Sequence[ScoredHit]) -> List[ScoredHit]:
    """Descending score, ascending doc_id on ties."""
    return sorted(hits, key=lambda h: (-h.score, h.doc_id))


class VectorIndex:
    """Unit-normalized rows in a single matrix; a full scan gives exact scores.

    Writers take the lock; readers work on the matrix snapshot they grabbed,
    so searches never see a half-applied ``add``.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise InvalidInput("index dim must be positive")
        self.dim = dim
        self._ids: List[str] = []
        self._positions: Dict[str, int] = {}
        self._matrix = np.zeros((0, dim))
        self._lock = RLock()

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._positions

    @property
    def ids(self) -> List[str]:
        return list(self._ids)

    def _unit(self, embedding: Embedding) -> np.ndarray:
        if embedding.dim != self.dim:
            raise InvalidInput(f"dimension mismatch: {embedding.dim} != {self.dim}")
        norm = embedding.norm()
        if norm == 0.0:
            raise InvalidInput("zero-norm vector")
        return embedding.values / norm

    def add(self, doc_id: str, embedding: Embedding) -> None:
        self.add_many([doc_id], [embedding])

    def add_many(self, ids: Sequence[str], embeddings: Sequence[Embedding]) -> None:
        if len(ids) != len(embeddings):
            raise InvalidInput(f"{len(ids)} ids but {len(embeddings)} embeddings")
        rows = [self._unit(e) for e in embeddings]
        with self._lock:
            fresh = set()
            for doc_id in ids:
                if doc_id in self._positions or doc_id in fresh:
                    raise InvalidInput(f"duplicate id {doc_id!r}")
                fresh.add(doc_id)
            if not rows:
                return
            start = len(self._ids)
            for i, doc_id in enumerate(ids):
                self._positions[doc_id] = start + i
            self._ids = self._ids + list(ids)
            self._matrix = np.vstack([self._matrix, np.vstack(rows)])

    def vector(self, doc_id: str) -> Embedding:
        if doc_id not in self._positions:
            raise InvalidInput(f"unknown id {doc_id!r}")
        return Embedding(self._matrix[self._positions[doc_id]])

    def similarity(self, query: Embedding, doc_id: str) -> float:
        if doc_id not in self._positions:
            raise InvalidInput(f"unknown id {doc_id!r}")
        q = self._unit(query)
        return float(np.clip(self._matrix[self._positions[doc_id]] @ q, -1.0, 1.0))

    def top_k(self, query: Embedding, k: int) -> List[ScoredHit]:
        if k < 1:
            raise InvalidInput("k must be at least 1")
        with self._lock:
            ids, matrix = self._ids, self._matrix
        if not ids:
            return []
        scores = np.clip(matrix @ self._unit(query), -1.0, 1.0)
        if k < len(ids):
            # everything tied with the k-th score competes on doc_id
            kth = np.partition(scores, -k)[-k]
            candidates = np.flatnonzero(scores >= kth)
        else:
            candidates = np.arange(len(ids))
        hits = [ScoredHit(ids[i], float(scores[i])) for i in candidates]
        return rank_hits(hits)[:k]

    def search_many(
        self, queries: Sequence[Embedding], k: int, workers: int = 1
    ) -> List[List[ScoredHit]]:
        """``top_k`` for every query, in input order."""
        if workers <= 1:
            return [self.top_k(q, k) for q in queries]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda q: self.top_k(q, k), queries))

    def save(self, path: str) -> None:
        with self._lock:
            if not self._ids:
                raise InvalidInput("refusing to save an index with no vectors")
            cache_write(path, self._ids, self._matrix.astype("<f4"))

    @classmethod
    def load(cls, path: str) -> "VectorIndex":
        ids, matrix = cache_read(path)
        if not ids:
            raise InvalidInput(f"{path}: index holds no vectors")
        index = cls(matrix.shape[1])
        index.add_many(ids, [Embedding(row) for row in matrix])
        logger.info("loaded %d vectors of dim %d from %s", len(index), index.dim, path)
        return index


def add(index: VectorIndex, doc_id: str, embedding: Embedding) -> None:
    index.add(doc_id, embedding)


def top_k(index: VectorIndex, query: Embedding, k: int) -> List[ScoredHit]:
    return index.top_k(query, k)


def search_many(index: VectorIndex, queries: Sequence[Embedding], k: int, workers: int = 1):
    return index.search_many(queries, k, workers)
