"""
The ``embed`` and ``index`` actions, plus the embedder flags shared with the
retrieval and benchmark actions.
"""
import sys
from typing import Any, Dict, List, Sequence

import numpy as np
from tqdm import tqdm

from .corpus import ingest
from .embedder import Embedder, EmbedderSpec, cache_read, cache_write, make_embedder
from .errors import InvalidInput
from .index import VectorIndex
from .math_kernels import Embedding
from .utils import endpoint_from_env, require_files, require_keys

HELP = {
    "embed": "embed a corpus into an embedding cache",
    "index": "build an index file from an embedding cache",
}

EMBEDDER_DEFAULTS = {
    "embedder": "toy",
    "dim": 256,
    "seed": 0,
    "endpoint": None,
    "cache_path": None,
    "batch_size": 128,
    "max_in_flight": 4,
    "retries": 3,
    "max_token_bytes": 64,
    "quiet": False,
}

DEFAULTS = {
    "embed": dict(EMBEDDER_DEFAULTS),
    "index": {},
}


def add_embedder_arguments(parser) -> None:
    parser.add_argument("--embedder", choices=["toy", "remote", "cached"], help="provider (toy)")
    parser.add_argument("--dim", type=int, help="embedding dimension (256)")
    parser.add_argument("--seed", type=int, help="toy embedder seed (0)")
    parser.add_argument(
        "--endpoint",
        help="remote embedding service URL; RETRIEVAL_KERNELS_ENDPOINT overrides",
    )
    parser.add_argument("--cache-path", help="cache file for the cached embedder")
    parser.add_argument("--batch-size", type=int, help="texts per embedding call (128)")
    parser.add_argument("--max-in-flight", type=int, help="concurrent remote requests (4)")
    parser.add_argument("--retries", type=int, help="remote retries per batch (3)")
    parser.add_argument("--max-token-bytes", type=int, help="tokenizer fallback limit (64)")
    parser.add_argument("--quiet", action="store_true", default=None, help="no progress bar")


def embedder_spec(request: Dict[str, Any]) -> EmbedderSpec:
    endpoint = endpoint_from_env(request.get("endpoint"))
    spec = EmbedderSpec(
        kind=request["embedder"],
        dim=request["dim"],
        seed=request["seed"],
        endpoint=endpoint,
        cache_path=request.get("cache_path"),
        batch_size=request["batch_size"],
        max_in_flight=request["max_in_flight"],
        retries=request["retries"],
        max_token_bytes=request["max_token_bytes"],
    )
    if spec.kind == "remote":
        require_keys({**request, "endpoint": endpoint}, "endpoint")
    return spec


def embed_texts(
    embedder: Embedder, texts: Sequence[str], batch_size: int, quiet: bool = False
) -> List[Embedding]:
    out: List[Embedding] = []
    starts = range(0, len(texts), batch_size)
    for start in tqdm(starts, desc="embedding", disable=quiet or not sys.stderr.isatty()):
        out.extend(embedder.embed_batch(texts[start:start + batch_size]))
    return out


def add_arguments(parser, action: str) -> None:
    if action == "embed":
        parser.add_argument("--corpus", help="line-delimited {id, text} records")
        parser.add_argument("--output", help="embedding cache to write")
        add_embedder_arguments(parser)
    else:
        parser.add_argument("--cache", help="embedding cache to read")
        parser.add_argument("--output", help="index file to write")


def check(request: Dict[str, Any]) -> None:
    action = request["action"]
    assert action in ("embed", "index"), f"Unknown action {action}"
    if action == "embed":
        require_files(request, "corpus")
        require_keys(request, "output")
        embedder_spec(request)
    else:
        require_files(request, "cache")
        require_keys(request, "output")


def run(request: Dict[str, Any]) -> None:
    if request["action"] == "embed":
        documents = ingest(request["corpus"])
        embedder = make_embedder(embedder_spec(request))
        vectors = embed_texts(
            embedder, [d.text for d in documents], request["batch_size"], request["quiet"]
        )
        cache_write(request["output"], [d.id for d in documents], vectors)
        print(
            f"wrote {len(vectors)} embeddings of dim {embedder.dim} to {request['output']}",
            flush=True,
        )
        return

    ids, matrix = cache_read(request["cache"])
    if not ids:
        raise InvalidInput(f"{request['cache']}: cache holds no vectors to index")
    index = VectorIndex(matrix.shape[1])
    index.add_many(ids, [Embedding(np.asarray(row)) for row in matrix])
    index.save(request["output"])
    print(f"indexed {len(index)} vectors of dim {index.dim} into {request['output']}", flush=True)
