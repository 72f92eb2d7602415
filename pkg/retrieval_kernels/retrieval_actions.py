"""The ``search``, ``rerank`` and ``mine`` actions."""
import argparse
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List

from .corpus import WhitespaceTokenizer, ingest, read_queries
from .embedder import make_embedder
from .embedding_actions import EMBEDDER_DEFAULTS, add_embedder_arguments, embed_texts, embedder_spec
from .errors import InvalidConfig
from .index import VectorIndex
from .metrics import read_qrels, read_run, write_run
from .pipeline import (
    MiningConfig, OracleReranker, make_reranker, mine_hard_negatives, rerank_hits, write_negatives,
)
from .utils import require_files, require_keys

HELP = {
    "search": "retrieve top-k documents for every query into a run file",
    "rerank": "rescore a run file with a reranker",
    "mine": "mine hard negatives for every judged positive",
}

DEFAULTS = {
    "search": {**EMBEDDER_DEFAULTS, "k": 20, "workers": 1, "tag": "run"},
    "rerank": {"reranker": "overlap", "k": 20, "max_query_tokens": 64, "max_token_bytes": 64, "tag": "run"},
    "mine": {
        **EMBEDDER_DEFAULTS,
        "reranker": "overlap",
        "margin": 0.95,
        "retrieve_k": 20,
        "keep_n": 8,
        "exclude_above": True,
        "max_query_tokens": 64,
        "workers": 1,
    },
}


def add_arguments(parser, action: str) -> None:
    if action == "search":
        parser.add_argument("--index", help="index file")
        parser.add_argument("--queries", help="line-delimited {id, text, task_definition?} records")
        parser.add_argument("--output", help="run file to write")
        parser.add_argument("--k", type=int, help="hits per query (20)")
        parser.add_argument("--workers", type=int, help="parallel search workers (1)")
        parser.add_argument("--tag", help="run tag column (run)")
        add_embedder_arguments(parser)
    elif action == "rerank":
        parser.add_argument("--run", help="run file to rescore")
        parser.add_argument("--corpus", help="corpus the run was retrieved from")
        parser.add_argument("--queries", help="queries of the run")
        parser.add_argument("--output", help="run file to write")
        parser.add_argument("--reranker", help="reranker name, or oracle with --qrels (overlap)")
        parser.add_argument("--qrels", help="judgments scored by the oracle reranker")
        parser.add_argument("--k", type=int, help="candidates rescored per query (20)")
        parser.add_argument("--max-query-tokens", type=int, help="query truncation (64)")
        parser.add_argument("--max-token-bytes", type=int, help="tokenizer fallback limit (64)")
        parser.add_argument("--tag", help="run tag column (run)")
    else:
        parser.add_argument("--qrels", help="judgments naming the positives")
        parser.add_argument("--index", help="index file")
        parser.add_argument("--queries", help="queries file")
        parser.add_argument("--corpus", help="corpus the index was built from")
        parser.add_argument("--output", help="negatives file to write")
        parser.add_argument("--reranker", help="reranker name (overlap)")
        parser.add_argument("--margin", type=float, help="false-negative margin (0.95)")
        parser.add_argument("--retrieve-k", type=int, help="candidates retrieved (20)")
        parser.add_argument("--keep-n", type=int, help="negatives kept per positive (8)")
        parser.add_argument(
            "--exclude-above",
            action=argparse.BooleanOptionalAction,
            default=None,
            help="drop candidates above margin * positive similarity (on)",
        )
        parser.add_argument("--max-query-tokens", type=int, help="query truncation (64)")
        parser.add_argument("--workers", type=int, help="parallel mining workers (1)")
        add_embedder_arguments(parser)


def mining_config(request: Dict[str, Any]) -> MiningConfig:
    return MiningConfig(
        margin=request["margin"],
        retrieve_k=request["retrieve_k"],
        keep_n=request["keep_n"],
        exclude_above=request["exclude_above"],
    )


def check(request: Dict[str, Any]) -> None:
    action = request["action"]
    assert action in ("search", "rerank", "mine"), f"Unknown action {action}"
    require_keys(request, "output")
    if action == "search":
        require_files(request, "index", "queries")
        embedder_spec(request)
    elif action == "rerank":
        require_files(request, "run", "corpus", "queries")
        if request["reranker"] == OracleReranker.name:
            require_files(request, "qrels")
        else:
            make_reranker(request["reranker"])
    else:
        require_files(request, "qrels", "index", "queries", "corpus")
        embedder_spec(request)
        mining_config(request)
        make_reranker(request["reranker"])


def _embed_queries(request, queries, index: VectorIndex):
    spec = embedder_spec(request)
    if spec.dim != index.dim:
        raise InvalidConfig(f"embedder dim {spec.dim} does not match index dim {index.dim}")
    return embed_texts(
        make_embedder(spec), [q.prompt() for q in queries], spec.batch_size, request["quiet"]
    )


def _search(request: Dict[str, Any]) -> None:
    index = VectorIndex.load(request["index"])
    queries = read_queries(request["queries"])
    vectors = _embed_queries(request, queries, index)
    hits = index.search_many(vectors, request["k"], request["workers"])
    run = {q.id: h for q, h in zip(queries, hits)}
    write_run(request["output"], run, request["tag"])
    print(f"searched {len(queries)} queries into {request['output']}", flush=True)


def _rerank(request: Dict[str, Any]) -> None:
    tokenizer = WhitespaceTokenizer(request["max_token_bytes"])
    run = read_run(request["run"])
    queries = {q.id: q for q in read_queries(request["queries"])}
    doc_tokens = {d.id: tokenizer.tokenize(d.text) for d in ingest(request["corpus"])}
    qrels = read_qrels(request["qrels"]) if request["reranker"] == OracleReranker.name else None
    reranker = None if qrels is not None else make_reranker(request["reranker"])
    reranked = {}
    for qid, hits in run.items():
        if qid not in queries:
            raise InvalidConfig(f"run names query {qid!r} missing from the queries file")
        reranked[qid] = rerank_hits(
            tokenizer.tokenize(queries[qid].text),
            hits[:request["k"]],
            reranker or OracleReranker(qrels.get(qid, {})),
            doc_tokens,
            request["max_query_tokens"],
        )
    write_run(request["output"], reranked, request["tag"])
    print(
        f"reranked {len(reranked)} queries with {request['reranker']} into {request['output']}",
        flush=True,
    )


def _mine(request: Dict[str, Any]) -> None:
    cfg = mining_config(request)
    tokenizer = WhitespaceTokenizer(request["max_token_bytes"])
    index = VectorIndex.load(request["index"])
    qrels = read_qrels(request["qrels"])
    queries = [q for q in read_queries(request["queries"]) if q.id in qrels]
    doc_tokens = {d.id: tokenizer.tokenize(d.text) for d in ingest(request["corpus"])}
    reranker = make_reranker(request["reranker"])
    vectors = _embed_queries(request, queries, index) if queries else []

    relevant = {q.id: sorted(d for d, g in qrels[q.id].items() if g > 0) for q in queries}
    jobs = [
        (q, vec, doc_id)
        for q, vec in zip(queries, vectors)
        for doc_id in relevant[q.id]
    ]

    def mine_one(job) -> Dict[str, Any]:
        q, vec, positive = job
        negatives = mine_hard_negatives(
            tokenizer.tokenize(q.text), vec, positive, index, reranker, doc_tokens,
            cfg, request["max_query_tokens"], exclude_ids=relevant[q.id],
        )
        return {"query_id": q.id, "positive_id": positive, "negatives": negatives}

    with ThreadPoolExecutor(max_workers=max(1, request["workers"])) as pool:
        records: List[Dict[str, Any]] = list(pool.map(mine_one, jobs))
    write_negatives(request["output"], records)
    print(f"mined negatives for {len(records)} positives into {request['output']}", flush=True)


def run(request: Dict[str, Any]) -> None:
    {"search": _search, "rerank": _rerank, "mine": _mine}[request["action"]](request)
