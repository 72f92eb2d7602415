"""
Embedding providers and the on-disk embedding cache.

Three providers share one interface: a deterministic feature-hashing ``toy``
embedder, a ``remote`` client for an HTTP embedding service, and a ``cached``
wrapper that memoizes another provider in a cache file.

Remote protocol: ``POST {"texts": [...]}`` answered by
``{"embeddings": [[...], ...]}``, one row per text.

Cache file layout (all integers little-endian)::

    magic  b"RKEC"  4 bytes
    version         u16 (1)
    reserved        u16 (0)
    dim             u32
    count           u64
    values          count * dim float32, row-major
    id table        count * (u32 byte length, UTF-8 bytes)
    checksum        8 bytes, BLAKE2b-64 of everything above
"""
import hashlib
import logging
import os
import struct
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np
import requests
from pydantic import Field, model_validator

from .corpus import WhitespaceTokenizer
from .errors import IntegrityError, InvalidConfig, InvalidInput, ProtocolError, TransportError
from .math_kernels import Embedding
from .utils import KernelConfig, auth_headers, endpoint_from_env, raise_json_for_status

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"RKEC"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")
_ID_LEN = struct.Struct("<I")
_CHECKSUM_BYTES = 8

REMOTE_BATCH_SIZE = 128

_write_lock = threading.Lock()
_path_locks: Dict[str, threading.Lock] = {}
_path_locks_guard = threading.Lock()


class EmbedderSpec(KernelConfig):
    kind: Literal["toy", "remote", "cached"] = "toy"
    dim: int = Field(256, gt=0)
    seed: int = 0
    endpoint: str | None = None
    cache_path: str | None = None
    inner: "EmbedderSpec | None" = None
    batch_size: int = Field(REMOTE_BATCH_SIZE, gt=0)
    max_in_flight: int = Field(4, gt=0)
    retries: int = Field(3, ge=0)
    timeout: float = Field(30.0, gt=0)
    backoff: float = Field(0.5, ge=0)
    max_token_bytes: int = Field(64, ge=4)

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "cached" and not self.cache_path:
            raise ValueError("a cached embedder needs cache_path")
        if self.inner is not None and self.inner.dim != self.dim:
            raise ValueError(f"inner embedder dim {self.inner.dim} != {self.dim}")
        return self


EmbedderSpec.model_rebuild()


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_CHECKSUM_BYTES).digest()


def cache_write(path: str, ids: Sequence[str], embeddings) -> None:
    """Write ids and vectors atomically; vectors are stored as float32."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise InvalidInput("cache ids must be unique")
    if isinstance(embeddings, np.ndarray):
        matrix = np.asarray(embeddings, dtype="<f4")
    elif len(ids) == 0:
        matrix = np.zeros((0, 0), dtype="<f4")
    else:
        matrix = np.vstack([
            e.values if isinstance(e, Embedding) else np.asarray(e) for e in embeddings
        ]).astype("<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise InvalidInput(f"{len(ids)} ids but {matrix.shape[0]} vectors")
    count, dim = matrix.shape

    parts = [_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, 0, dim, count), matrix.tobytes(order="C")]
    for doc_id in ids:
        raw = doc_id.encode("utf-8")
        parts.append(_ID_LEN.pack(len(raw)))
        parts.append(raw)
    body = b"".join(parts)

    directory = os.path.dirname(os.path.abspath(path))
    with _write_lock:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".cache-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(body)
                fh.write(_checksum(body))
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    logger.debug("wrote %d x %d cache to %s", count, dim, path)


def cache_read(path: str) -> Tuple[List[str], np.ndarray]:
    """Return ``(ids, matrix)`` where ``matrix`` is (count, dim) float32."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size + _CHECKSUM_BYTES:
        raise IntegrityError(f"{path}: file too short for a cache header")
    magic, version, _, dim, count = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise IntegrityError(f"{path}: unsupported cache version {version}")
    body, stored = data[:-_CHECKSUM_BYTES], data[-_CHECKSUM_BYTES:]
    if _checksum(body) != stored:
        raise IntegrityError(f"{path}: checksum mismatch")

    offset = _HEADER.size
    payload = count * dim * 4
    if offset + payload > len(body):
        raise IntegrityError(f"{path}: truncated payload")
    matrix = np.frombuffer(body, dtype="<f4", count=count * dim, offset=offset)
    matrix = matrix.reshape(count, dim).copy()
    offset += payload

    ids = []
    for _ in range(count):
        if offset + _ID_LEN.size > len(body):
            raise IntegrityError(f"{path}: truncated id table")
        (n,) = _ID_LEN.unpack_from(body, offset)
        offset += _ID_LEN.size
        if offset + n > len(body):
            raise IntegrityError(f"{path}: truncated id table")
        ids.append(body[offset:offset + n].decode("utf-8"))
        offset += n
    if offset != len(body):
        raise IntegrityError(f"{path}: {len(body) - offset} trailing bytes")
    return ids, matrix


def _path_lock(path: str) -> threading.Lock:
    with _path_locks_guard:
        return _path_locks.setdefault(os.path.abspath(path), threading.Lock())


def _normalize(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


class Embedder:
    def __init__(self, spec: EmbedderSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.dim

    def embed_batch(self, texts: Sequence[str]) -> List[Embedding]:
        raise NotImplementedError


class ToyEmbedder(Embedder):
    """Signed feature hashing of token counts, L2-normalized.

    Each token hashes (BLAKE2b keyed by the seed) to a bucket and a sign, so
    the vector is fully determined by ``(dim, seed)`` and the text.
    """

    def __init__(self, spec: EmbedderSpec):
        super().__init__(spec)
        self._key = int(spec.seed).to_bytes(8, "little", signed=True)
        self._tokenizer = WhitespaceTokenizer(spec.max_token_bytes)

    def _feature(self, token: str) -> Tuple[int, float]:
        h = int.from_bytes(
            hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest(),
            "little",
        )
        return h % self.dim, (1.0 if (h >> 63) == 0 else -1.0)

    def embed_text(self, text: str) -> Embedding:
        vec = np.zeros(self.dim)
        for token in self._tokenizer.tokenize(text):
            bucket, sign = self._feature(token)
            vec[bucket] += sign
        if not np.any(vec):
            # no tokens, or every token cancelled out
            bucket, sign = self._feature("")
            vec[bucket] = sign
        return Embedding(_normalize(vec))

    def embed_batch(self, texts: Sequence[str]) -> List[Embedding]:
        return [self.embed_text(t) for t in texts]


class RemoteEmbedder(Embedder):
    def __init__(self, spec: EmbedderSpec):
        super().__init__(spec)
        self.endpoint = endpoint_from_env(spec.endpoint)
        if not self.endpoint:
            raise InvalidConfig("remote embedder needs an endpoint")

    def _post(self, texts: List[str]) -> List[Embedding]:
        last = None
        for attempt in range(self.spec.retries + 1):
            try:
                r = requests.post(
                    self.endpoint,
                    json={"texts": texts},
                    headers=auth_headers(),
                    timeout=self.spec.timeout,
                )
                raise_json_for_status(r)
                data = r.json()
                break
            except (requests.RequestException, ValueError) as e:
                last = e
                logger.warning(
                    "embedding request failed (attempt %d of %d): %r",
                    attempt + 1, self.spec.retries + 1, e,
                )
                if attempt < self.spec.retries:
                    time.sleep(self.spec.backoff)
        else:
            raise TransportError(
                f"embedding request to {self.endpoint} failed: {last!r}",
                retries=self.spec.retries,
            )

        rows = data.get("embeddings") if isinstance(data, dict) else None
        if not isinstance(rows, list) or len(rows) != len(texts):
            raise ProtocolError(
                f"expected {len(texts)} embeddings from {self.endpoint}"
            )
        out = []
        for row in rows:
            vec = np.asarray(row, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise ProtocolError(
                    f"service returned a vector of shape {vec.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(vec)) or not np.any(vec):
                raise ProtocolError("service returned a zero or non-finite vector")
            out.append(Embedding(_normalize(vec)))
        return out

    def embed_batch(self, texts: Sequence[str]) -> List[Embedding]:
        texts = list(texts)
        size = self.spec.batch_size
        batches = [texts[i:i + size] for i in range(0, len(texts), size)]
        with ThreadPoolExecutor(max_workers=self.spec.max_in_flight) as pool:
            results = list(pool.map(self._post, batches))
        return [e for batch in results for e in batch]


class CachedEmbedder(Embedder):
    """Memoize another embedder by text digest in a cache file."""

    def __init__(self, spec: EmbedderSpec):
        super().__init__(spec)
        inner = spec.inner or EmbedderSpec(kind="toy", dim=spec.dim, seed=spec.seed)
        self.inner = make_embedder(inner)
        self.cache_path = spec.cache_path

    @staticmethod
    def key(text: str) -> str:
        return hashlib.blake2b(text.encode("utf-8"), digest_size=16).hexdigest()

    def embed_batch(self, texts: Sequence[str]) -> List[Embedding]:
        # one lock per cache file covers the read, the inner call and the write
        with _path_lock(self.cache_path):
            known = self._update(texts)
        return [Embedding(_normalize(known[self.key(t)].astype(np.float64))) for t in texts]

    def _update(self, texts: Sequence[str]) -> Dict[str, np.ndarray]:
        ids, matrix = [], np.zeros((0, self.dim), dtype="<f4")
        if os.path.exists(self.cache_path):
            ids, matrix = cache_read(self.cache_path)
            if ids and matrix.shape[1] != self.dim:
                raise IntegrityError(
                    f"{self.cache_path}: cache dim {matrix.shape[1]} != {self.dim}"
                )
        known = {k: matrix[i] for i, k in enumerate(ids)}

        missing = list(dict.fromkeys(t for t in texts if self.key(t) not in known))
        if missing:
            logger.debug("cache miss for %d of %d texts", len(missing), len(texts))
            fresh = self.inner.embed_batch(missing)
            for text, emb in zip(missing, fresh):
                known[self.key(text)] = emb.values.astype("<f4")
            cache_write(self.cache_path, list(known), np.vstack(list(known.values())))
        return known


_KINDS = {"toy": ToyEmbedder, "remote": RemoteEmbedder, "cached": CachedEmbedder}


def make_embedder(spec: EmbedderSpec) -> Embedder:
    return _KINDS[spec.kind](spec)


def embed_batch(texts: Sequence[str], spec: EmbedderSpec) -> List[Embedding]:
    if not texts:
        raise InvalidInput("nothing to embed")
    return make_embedder(spec).embed_batch(texts)
