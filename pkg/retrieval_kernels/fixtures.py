"""
Synthetic corpora with planted relevance.

Each query owns four topic tokens. Its gold document (grade 2) repeats two of
them, every third query also gets a weaker relevant document (grade 1) that
repeats one, and every even query gets a judged non-relevant distractor that
repeats three. A bag-of-words retriever therefore tends to rank the
distractor above the gold document, which a good reranker has to undo.
"""
import os
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .corpus import Document, Query
from .errors import InvalidInput
from .metrics import Qrels, write_qrels
from .utils import write_jsonl

TOPIC_TOKENS = 4
FILLER_VOCAB = 3000


@dataclass
class PlantedCorpus:
    documents: List[Document]
    queries: List[Query]
    qrels: Qrels

    def doc_texts(self) -> Dict[str, str]:
        return {d.id: d.text for d in self.documents}


def _topic(q: int) -> List[str]:
    return [f"topic{q:03d}{chr(ord('a') + j)}" for j in range(TOPIC_TOKENS)]


def planted_corpus(n_docs: int = 200, n_queries: int = 40, seed: int = 13) -> PlantedCorpus:
    rng = np.random.default_rng(seed)
    filler = [f"w{i:04d}" for i in range(FILLER_VOCAB)]

    def filler_tokens(n: int) -> List[str]:
        return [filler[i] for i in rng.integers(0, FILLER_VOCAB, size=n)]

    # (token list, query index or None, grade)
    planted = []
    for q in range(n_queries):
        topic = _topic(q)
        planted.append((topic[:2] * 3 + filler_tokens(24), q, 2))
        if q % 3 == 0:
            planted.append((topic[:1] * 2 + filler_tokens(24), q, 1))
        if q % 2 == 0:
            planted.append((topic[:3] * 3 + filler_tokens(24), q, 0))
    if len(planted) > n_docs:
        raise InvalidInput(
            f"{n_queries} queries need at least {len(planted)} documents, got {n_docs}"
        )
    while len(planted) < n_docs:
        planted.append((filler_tokens(30), None, 0))

    order = rng.permutation(len(planted))
    documents = []
    qrels: Qrels = {f"q-{q:03d}": {} for q in range(n_queries)}
    for k, idx in enumerate(order):
        tokens, q, grade = planted[idx]
        tokens = [tokens[i] for i in rng.permutation(len(tokens))]
        doc_id = f"doc-{k:04d}"
        documents.append(Document(doc_id, " ".join(tokens)))
        if q is not None:
            qrels[f"q-{q:03d}"][doc_id] = grade

    queries = [Query(f"q-{q:03d}", " ".join(_topic(q))) for q in range(n_queries)]
    return PlantedCorpus(documents, queries, qrels)


def write_fixture(directory: str, corpus: PlantedCorpus) -> Dict[str, str]:
    """Write corpus.jsonl, queries.jsonl and qrels.txt; return their paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        "corpus": os.path.join(directory, "corpus.jsonl"),
        "queries": os.path.join(directory, "queries.jsonl"),
        "qrels": os.path.join(directory, "qrels.txt"),
    }
    write_jsonl(paths["corpus"], ({"id": d.id, "text": d.text} for d in corpus.documents))
    write_jsonl(paths["queries"], ({"id": q.id, "text": q.text} for q in corpus.queries))
    write_qrels(paths["qrels"], corpus.qrels)
    return paths
