import json
import math
from collections import Counter

import numpy as np
import pytest

from retrieval_kernels.corpus import WhitespaceTokenizer
from retrieval_kernels.embedder import EmbedderSpec, make_embedder
from retrieval_kernels.errors import InvalidConfig, InvalidInput
from retrieval_kernels.index import VectorIndex
from retrieval_kernels.math_kernels import Embedding
from retrieval_kernels.metrics import query_ndcg
from retrieval_kernels.pipeline import (
    RERANKERS,
    IdentityReranker,
    MiningConfig,
    OracleReranker,
    OverlapReranker,
    Reranker,
    make_reranker,
    mine_hard_negatives,
    register_reranker,
    retrieve_rerank,
    write_negatives,
)


def at_cosine(c):
    return Embedding([c, math.sqrt(1 - c * c)])


def planar_index(sims):
    index = VectorIndex(2)
    for doc_id, c in sims.items():
        index.add(doc_id, at_cosine(c))
    return index


QUERY = Embedding([1.0, 0.0])


class TestRetrieveRerank:
    def test_identity_keeps_order(self):
        index = planar_index({"a": 0.9, "b": 0.7, "c": 0.4})
        hits = retrieve_rerank([], QUERY, index, IdentityReranker(), {})
        assert [h.doc_id for h in hits] == ["a", "b", "c"]
        assert hits == index.top_k(QUERY, 20)

    def test_oracle_lifts_gold_to_first(self):
        index = planar_index({"d1": 0.95, "d2": 0.9, "gold": 0.8, "d4": 0.6, "d5": 0.3})
        assert [h.doc_id for h in index.top_k(QUERY, 5)].index("gold") == 2
        hits = retrieve_rerank([], QUERY, index, OracleReranker({"gold": 1}), {})
        assert hits[0].doc_id == "gold"

    def test_oracle_dominance(self):
        sims = {f"d{i}": 0.05 * (i + 1) for i in range(15)}
        gold = {"d1": 1, "d7": 2, "d3": 1}
        hits = retrieve_rerank([], QUERY, planar_index(sims), OracleReranker(gold), {}, retrieve_k=10)
        ranked = [h.doc_id for h in hits]
        present = [d for d in gold if d in ranked]
        others = [d for d in ranked if d not in gold]
        assert all(ranked.index(g) < ranked.index(o) for g in present for o in others)

    def test_query_is_truncated(self):
        seen = []

        class Recording(Reranker):
            def score(self, query_tokens, doc_tokens):
                seen.append(len(query_tokens))
                return 0.0

        index = planar_index({"a": 0.5})
        retrieve_rerank([f"t{i}" for i in range(100)], QUERY, index, Recording(), {"a": ["x"]})
        assert seen == [64]

    def test_missing_document_tokens(self):
        with pytest.raises(InvalidInput):
            retrieve_rerank(["x"], QUERY, planar_index({"a": 0.5}), OverlapReranker(), {})


def test_overlap_counts_multiset_intersection():
    assert OverlapReranker().score(["a", "a", "b", "c"], ["a", "b", "b", "a", "a"]) == 3.0
    assert OverlapReranker(lowercase=True).score(["A"], ["a"]) == 1.0


def test_planted_corpus_improves_with_oracle(planted):
    tokenizer = WhitespaceTokenizer()
    toy = make_embedder(EmbedderSpec(dim=256))
    index = VectorIndex(256)
    index.add_many(
        [d.id for d in planted.documents], toy.embed_batch([d.text for d in planted.documents])
    )
    doc_tokens = {d.id: tokenizer.tokenize(d.text) for d in planted.documents}
    improved = 0
    for query in planted.queries:
        grades = planted.qrels[query.id]
        vec = toy.embed_text(query.text)
        before = query_ndcg([h.doc_id for h in index.top_k(vec, 20)], grades, 10)
        hits = retrieve_rerank(
            tokenizer.tokenize(query.text), vec, index, OracleReranker(grades), doc_tokens
        )
        after = query_ndcg([h.doc_id for h in hits], grades, 10)
        assert after >= before - 1e-12
        improved += after > before + 1e-12
    assert improved >= 1


class TestMining:
    def test_margin_example(self):
        index = planar_index({"pos": 0.80, "n1": 0.79, "n2": 0.77, "n3": 0.75, "n4": 0.50})
        negatives = mine_hard_negatives(
            [], QUERY, "pos", index, IdentityReranker(), {}, MiningConfig(margin=0.95)
        )
        assert negatives == ["n3", "n4"]

    def test_margin_one_filters_nothing(self):
        index = planar_index({"pos": 0.80, "n1": 0.79, "n2": 0.77, "n3": 0.75})
        negatives = mine_hard_negatives(
            [], QUERY, "pos", index, IdentityReranker(), {}, MiningConfig(margin=1.0)
        )
        assert negatives == ["n1", "n2", "n3"]

    def test_keep_only_above_threshold(self):
        index = planar_index({"pos": 0.80, "n1": 0.79, "n2": 0.77, "n3": 0.75})
        cfg = MiningConfig(margin=0.95, exclude_above=False)
        assert mine_hard_negatives([], QUERY, "pos", index, IdentityReranker(), {}, cfg) == ["n1", "n2"]

    def test_other_relevant_documents_are_not_negatives(self):
        index = planar_index({"pos": 0.80, "also": 0.70, "n1": 0.60})
        cfg = MiningConfig(margin=0.95)
        negatives = mine_hard_negatives([], QUERY, "pos", index, IdentityReranker(), {}, cfg)
        assert negatives == ["also", "n1"]
        negatives = mine_hard_negatives(
            [], QUERY, "pos", index, IdentityReranker(), {}, cfg, exclude_ids=["pos", "also"]
        )
        assert negatives == ["n1"]

    def test_positive_must_exist(self):
        with pytest.raises(InvalidInput):
            mine_hard_negatives(
                [], QUERY, "pos", planar_index({"a": 0.5}), IdentityReranker(), {}, MiningConfig()
            )

    def test_config(self):
        with pytest.raises(InvalidConfig):
            MiningConfig(keep_n=30, retrieve_k=20)
        with pytest.raises(InvalidConfig):
            MiningConfig(margin=1.5)

    def test_contract_against_full_rescore(self, rng):
        vocab = [f"v{i}" for i in range(40)]
        n_docs, dim = 300, 12
        matrix = rng.normal(size=(n_docs, dim))
        ids = [f"doc-{i:03d}" for i in range(n_docs)]
        doc_tokens = {d: list(rng.choice(vocab, size=12)) for d in ids}
        index = VectorIndex(dim)
        index.add_many(ids, [Embedding(r) for r in matrix])
        unit = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
        cfg = MiningConfig()
        reranker = OverlapReranker()

        for _ in range(500):
            q = rng.normal(size=dim)
            query_tokens = list(rng.choice(vocab, size=6))
            positive = ids[int(rng.integers(n_docs))]
            negatives = mine_hard_negatives(
                query_tokens, Embedding(q), positive, index, reranker, doc_tokens, cfg
            )

            sims = dict(zip(ids, unit @ (q / np.linalg.norm(q))))
            threshold = 0.95 * sims[positive]
            assert len(negatives) <= 8
            assert positive not in negatives
            assert all(sims[n] <= threshold + 1e-12 for n in negatives)

            top = sorted(ids, key=lambda d: (-sims[d], d))[:20]
            survivors = [d for d in top if d != positive and sims[d] <= threshold]
            overlap = {
                d: sum((Counter(query_tokens) & Counter(doc_tokens[d])).values()) for d in survivors
            }
            expected = sorted(survivors, key=lambda d: (-overlap[d], d))[:8]
            assert negatives == expected


def test_write_negatives(tmp_path):
    path = tmp_path / "neg.jsonl"
    write_negatives(str(path), [{"query_id": "q", "positive_id": "p", "negatives": ("a", "b")}])
    assert json.loads(path.read_text(encoding="utf-8")) == {
        "query_id": "q", "positive_id": "p", "negatives": ["a", "b"],
    }


def test_reranker_registry(monkeypatch):
    monkeypatch.setitem(RERANKERS, "flat", lambda: IdentityReranker())
    assert isinstance(make_reranker("flat"), IdentityReranker)
    with pytest.raises(AssertionError):
        register_reranker("overlap", OverlapReranker)
    with pytest.raises(InvalidConfig):
        make_reranker("cross-encoder")
    assert isinstance(make_reranker("overlap"), OverlapReranker)
