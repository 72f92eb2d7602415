"""
The ``ingest`` and ``synth`` actions.

``ingest`` turns a corpus into a chunk manifest; ``synth`` writes either the
planted-relevance fixture (corpus, queries, qrels) or a throughput corpus.
"""
import os
from typing import Any, Dict

from . import bench, fixtures
from .corpus import ChunkConfig, WhitespaceTokenizer, chunk_document, ingest, write_chunk_manifest
from .errors import InvalidConfig
from .utils import require_files, require_keys, write_jsonl

HELP = {
    "ingest": "chunk a corpus into a chunk manifest",
    "synth": "write a synthetic fixture or throughput corpus",
}

DEFAULTS = {
    "ingest": {"chunk_size": 512, "overlap": 100, "max_token_bytes": 64},
    "synth": {"kind": "planted", "docs": 200, "queries": 40, "seed": 13, "mean_chars": 6393.0},
}


def add_arguments(parser, action: str) -> None:
    if action == "ingest":
        parser.add_argument("--corpus", help="line-delimited {id, text} records")
        parser.add_argument("--output", help="chunk manifest to write")
        parser.add_argument("--chunk-size", type=int, help="tokens per chunk (512)")
        parser.add_argument("--overlap", type=int, help="tokens shared by neighbours (100)")
        parser.add_argument("--max-token-bytes", type=int, help="tokenizer fallback limit (64)")
    else:
        parser.add_argument("--output-dir", help="directory to write into")
        parser.add_argument("--kind", choices=["planted", "throughput"], help="fixture kind (planted)")
        parser.add_argument("--docs", type=int, help="number of documents (200)")
        parser.add_argument("--queries", type=int, help="planted queries (40)")
        parser.add_argument("--seed", type=int, help="random seed (13)")
        parser.add_argument("--mean-chars", type=float, help="throughput target mean length (6393)")


def chunk_config(request: Dict[str, Any]) -> ChunkConfig:
    return ChunkConfig(chunk_size=request["chunk_size"], overlap=request["overlap"])


def check(request: Dict[str, Any]) -> None:
    action = request["action"]
    assert action in ("ingest", "synth"), f"Unknown action {action}"
    if action == "ingest":
        require_files(request, "corpus")
        require_keys(request, "output")
        chunk_config(request)
    else:
        require_keys(request, "output_dir")
        if request["kind"] not in ("planted", "throughput"):
            raise InvalidConfig(f"unknown fixture kind {request['kind']!r}")


def run(request: Dict[str, Any]) -> None:
    if request["action"] == "ingest":
        cfg = chunk_config(request)
        tokenizer = WhitespaceTokenizer(request["max_token_bytes"])
        documents = ingest(request["corpus"])
        chunks = [
            c for doc in documents for c, _ in chunk_document(doc, tokenizer, cfg)
        ]
        write_chunk_manifest(request["output"], chunks)
        print(
            f"wrote {len(chunks)} chunks for {len(documents)} documents to {request['output']}",
            flush=True,
        )
        return

    out = request["output_dir"]
    if request["kind"] == "planted":
        planted = fixtures.planted_corpus(request["docs"], request["queries"], request["seed"])
        paths = fixtures.write_fixture(out, planted)
        print(
            f"wrote {len(planted.documents)} documents and {len(planted.queries)} "
            f"queries to {out}",
            flush=True,
        )
        for name, path in paths.items():
            print(f"    {name}: {path}", flush=True)
    else:
        dist = bench.LengthDistribution(mean=request["mean_chars"])
        documents = bench.synth_corpus(request["docs"], dist, request["seed"])
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "corpus.jsonl")
        write_jsonl(path, ({"id": d.id, "text": d.text} for d in documents))
        stats = bench.length_stats(documents)
        print(
            f"wrote {len(documents)} documents to {path}, "
            f"mean {stats['mean_chars']:.1f} chars",
            flush=True,
        )
