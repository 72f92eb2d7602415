"""
Throughput harness: chunk, embed in batches, report documents per second.

Absolute numbers depend on the host; comparisons between two embedders
measured on the same host are what the reports are for.
"""
import logging
import math
import statistics
import time
from typing import Callable, Dict, List, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator
from ruamel.yaml import YAML
from ruamel.yaml.comments import CommentedMap
from tqdm import tqdm

from .corpus import ChunkConfig, Document, WhitespaceTokenizer, chunk, chunk_document
from .embedder import Embedder
from .errors import InvalidInput
from .utils import KernelConfig

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 128
HISTOGRAM_BIN = 64
TIMING_NOTE = "wall time covers tokenization, chunking and embedding"


class ThroughputReport(BaseModel):
    embedder: str
    total_docs: int
    total_chunks: int
    chunk_size: int
    overlap: int
    batch_size: int
    wall_times: List[float]
    failures: List[str] = Field(default_factory=list)
    docs_per_second: float | None = None
    chunk_histogram: Dict[str, int] = Field(default_factory=dict)
    includes_tokenization: bool = True


class LengthDistribution(KernelConfig):
    """Log-normal document lengths in characters, rescaled to hit ``mean``."""

    mean: float = Field(6393.0, gt=0)
    min_chars: int = Field(10, ge=1)
    max_chars: int = Field(475_001, ge=1)
    sigma: float = Field(1.2, gt=0)

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.min_chars <= self.mean <= self.max_chars:
            raise ValueError("mean must lie between min_chars and max_chars")
        return self


def chunk_histogram(lengths: Sequence[int], chunk_size: int) -> Dict[str, int]:
    """Counts of chunk lengths in bins of 64 tokens: ``"1-64"``, ``"65-128"``, ..."""
    edges = list(range(0, chunk_size, HISTOGRAM_BIN)) + [chunk_size]
    counts, _ = np.histogram(np.asarray(lengths) - 1, bins=edges)
    return {f"{lo + 1}-{hi}": int(c) for lo, hi, c in zip(edges, edges[1:], counts)}


def measure_throughput(
    documents: Sequence[Document],
    embedder: Embedder,
    chunk_cfg: ChunkConfig,
    batch_size: int = DEFAULT_BATCH_SIZE,
    repeats: int = 3,
    tokenizer=None,
    clock: Callable[[], float] = time.perf_counter,
    label: str = "",
    progress: bool = False,
) -> ThroughputReport:
    if not documents:
        raise InvalidInput("throughput needs a non-empty corpus")
    if batch_size < 1 or repeats < 1:
        raise InvalidInput("batch_size and repeats must be positive")
    tokenizer = tokenizer or WhitespaceTokenizer()

    lengths = [
        len(c)
        for doc in documents
        for c in chunk(tokenizer.tokenize(doc.text), chunk_cfg, doc_id=doc.id)
    ]

    wall_times, failures = [], []
    for r in tqdm(range(repeats), desc="repeats", disable=not progress):
        start = clock()
        try:
            pending = []
            for doc in documents:
                for _, tokens in chunk_document(doc, tokenizer, chunk_cfg):
                    pending.append(" ".join(tokens))
                    if len(pending) == batch_size:
                        embedder.embed_batch(pending)
                        pending = []
            if pending:
                embedder.embed_batch(pending)
        except Exception as e:
            logger.warning("repeat %d aborted: %r", r, e)
            failures.append(f"repeat {r}: {e!r}")
            continue
        wall_times.append(clock() - start)

    docs_per_second = None
    if wall_times:
        median = statistics.median(wall_times)
        docs_per_second = len(documents) / median if median > 0 else math.inf
    return ThroughputReport(
        embedder=label or type(embedder).__name__,
        total_docs=len(documents),
        total_chunks=len(lengths),
        chunk_size=chunk_cfg.chunk_size,
        overlap=chunk_cfg.overlap,
        batch_size=batch_size,
        wall_times=wall_times,
        failures=failures,
        docs_per_second=docs_per_second,
        chunk_histogram=chunk_histogram(lengths, chunk_cfg.chunk_size),
    )


def relative_speed(ours: float, other: float) -> float:
    """How much faster (positive) or slower (negative) ``other`` is than ``ours``."""
    if ours <= 0:
        raise InvalidInput("reference speed must be positive")
    return other / ours - 1.0


def format_relative(x: float) -> str:
    return f"{x * 100:.1f}%"


def compare(reports: Sequence[ThroughputReport], baseline: ThroughputReport) -> str:
    """Plain-text table of docs/s and speed relative to ``baseline``."""
    rows = [("Embedder", "Chunks", "Docs/s", "Rel to baseline")]
    for report in reports:
        if report.docs_per_second is None or baseline.docs_per_second is None:
            rel = "n/a"
            speed = "n/a" if report.docs_per_second is None else f"{report.docs_per_second:.0f}"
        else:
            rel = format_relative(relative_speed(baseline.docs_per_second, report.docs_per_second))
            speed = f"{report.docs_per_second:.0f}"
        rows.append((report.embedder, str(report.total_chunks), speed, rel))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = [
        " | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        for row in rows
    ]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(path: str, report: ThroughputReport) -> None:
    data = CommentedMap(report.model_dump())
    data.yaml_set_start_comment(TIMING_NOTE)
    yaml = YAML(typ="rt")
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(data, f)


def read_report(path: str) -> ThroughputReport:
    yaml = YAML(typ="safe")
    with open(path, encoding="utf-8") as f:
        return ThroughputReport.model_validate(yaml.load(f))


def _vocabulary(rng: np.random.Generator, size: int = 2000) -> List[str]:
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    lengths = rng.integers(2, 10, size=size)
    return ["".join(rng.choice(letters, size=n)) for n in lengths]


def _text_of_length(rng, vocab: List[str], n_chars: int) -> str:
    avg = sum(len(w) for w in vocab) / len(vocab) + 1
    parts: List[str] = []
    size = 0
    while size < n_chars:
        words = [vocab[i] for i in rng.integers(0, len(vocab), size=int(n_chars / avg) + 8)]
        parts.extend(words)
        size += sum(len(w) + 1 for w in words)
    text = " ".join(parts)[:n_chars]
    if text.endswith(" "):
        text = text[:-1] + "x"
    return text


def synth_lengths(n_docs: int, dist: LengthDistribution, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mu = math.log(dist.mean) - dist.sigma ** 2 / 2
    lengths = rng.lognormal(mu, dist.sigma, size=n_docs)
    for _ in range(50):
        lengths = np.clip(lengths * (dist.mean / lengths.mean()), dist.min_chars, dist.max_chars)
        if abs(lengths.mean() / dist.mean - 1) < 1e-3:
            break
    return np.rint(lengths).astype(np.int64)


def synth_corpus(
    n_docs: int,
    length_distribution: LengthDistribution | None = None,
    seed: int = 0,
) -> List[Document]:
    """Deterministic corpus whose character lengths follow ``length_distribution``."""
    if n_docs < 1:
        raise InvalidInput("n_docs must be at least 1")
    dist = length_distribution or LengthDistribution()
    lengths = synth_lengths(n_docs, dist, seed)
    rng = np.random.default_rng([seed, 1])
    vocab = _vocabulary(rng)
    docs = [
        Document(f"synth-{i:06d}", _text_of_length(rng, vocab, int(n)))
        for i, n in enumerate(lengths)
    ]
    logger.info(
        "synthesized %d documents, mean %.1f chars", n_docs, float(np.mean(lengths))
    )
    return docs


def length_stats(documents: Sequence[Document]) -> Dict[str, float]:
    lengths = [len(d.text) for d in documents]
    return {
        "mean_chars": statistics.fmean(lengths),
        "min_chars": min(lengths),
        "max_chars": max(lengths),
    }
