"""
Document ingestion, tokenization, sliding-window chunking and query templating.

Corpus files are UTF-8, one JSON object per line::

    {"id": "doc-1", "text": "..."}

Query files use the same layout with an optional task description::

    {"id": "q-1", "text": "...", "task_definition": "Given a question, ..."}
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Protocol, Sequence, Tuple

from pydantic import Field, model_validator

from .errors import InvalidInput
from .utils import KernelConfig, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

DEFAULT_MAX_QUERY_TOKENS = 64


@dataclass(frozen=True)
class Document:
    id: str
    text: str


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    task_definition: str | None = None

    def prompt(self) -> str:
        """Text to embed: the instruction template when a task is given."""
        if self.task_definition is None:
            return self.text
        return instruct_query(self.task_definition, self.text)


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    chunk_index: int
    token_start: int
    token_end: int

    def __len__(self) -> int:
        return self.token_end - self.token_start


class ChunkConfig(KernelConfig):
    chunk_size: int = Field(512, gt=0)
    overlap: int = Field(100, ge=0)

    @model_validator(mode="after")
    def _check_overlap(self):
        if self.overlap >= self.chunk_size:
            raise ValueError(
                f"overlap ({self.overlap}) must be smaller than chunk_size ({self.chunk_size})"
            )
        return self

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> List[str]:
        ...


class WhitespaceTokenizer:
    """Split on whitespace; overlong tokens fall back to byte-bounded pieces.

    A token whose UTF-8 encoding is longer than ``max_token_bytes`` is cut into
    consecutive pieces of at most that many bytes, always on character
    boundaries.
    """

    def __init__(self, max_token_bytes: int = 64):
        if max_token_bytes < 4:
            raise InvalidInput("max_token_bytes must be at least 4")
        self.max_token_bytes = max_token_bytes

    def _pieces(self, word: str) -> Iterable[str]:
        start = 0
        size = 0
        for i, ch in enumerate(word):
            n = len(ch.encode("utf-8"))
            if size + n > self.max_token_bytes:
                yield word[start:i]
                start, size = i, 0
            size += n
        yield word[start:]

    def tokenize(self, text: str) -> List[str]:
        tokens = []
        for word in text.split():
            if len(word.encode("utf-8")) <= self.max_token_bytes:
                tokens.append(word)
            else:
                tokens.extend(self._pieces(word))
        return tokens


def ingest(path: str) -> List[Document]:
    """Read a corpus file in order, rejecting malformed lines and duplicate ids."""
    documents = []
    seen = {}
    for lineno, record in read_jsonl(path):
        doc_id = record.get("id")
        text = record.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            raise InvalidInput(f"{path}:{lineno}: missing or empty 'id'")
        if not isinstance(text, str):
            raise InvalidInput(f"{path}:{lineno}: missing 'text' for {doc_id!r}")
        if doc_id in seen:
            raise InvalidInput(
                f"{path}:{lineno}: duplicate id {doc_id!r} (first seen on line {seen[doc_id]})"
            )
        seen[doc_id] = lineno
        documents.append(Document(doc_id, text))
    logger.info("ingested %d documents from %s", len(documents), path)
    return documents


def read_queries(path: str) -> List[Query]:
    queries = []
    seen = set()
    for lineno, record in read_jsonl(path):
        qid = record.get("id")
        text = record.get("text")
        task = record.get("task_definition")
        if not isinstance(qid, str) or not qid or not isinstance(text, str):
            raise InvalidInput(f"{path}:{lineno}: query needs string 'id' and 'text'")
        if task is not None and not isinstance(task, str):
            raise InvalidInput(f"{path}:{lineno}: 'task_definition' must be a string")
        if qid in seen:
            raise InvalidInput(f"{path}:{lineno}: duplicate query id {qid!r}")
        seen.add(qid)
        queries.append(Query(qid, text, task))
    return queries


def chunk(tokens: Sequence[str], cfg: ChunkConfig, doc_id: str = "") -> List[Chunk]:
    """Sliding-window spans ``[k*stride, min(k*stride + chunk_size, N))``.

    The last chunk ends at N; a document of at most ``chunk_size`` tokens gives
    exactly one chunk and an empty one gives none.
    """
    n = len(tokens)
    chunks = []
    start = 0
    while start < n:
        end = min(start + cfg.chunk_size, n)
        chunks.append(Chunk(doc_id, len(chunks), start, end))
        if end == n:
            break
        start += cfg.stride
    return chunks


def chunk_document(
    document: Document, tokenizer: Tokenizer, cfg: ChunkConfig
) -> List[Tuple[Chunk, List[str]]]:
    tokens = tokenizer.tokenize(document.text)
    return [
        (c, tokens[c.token_start:c.token_end])
        for c in chunk(tokens, cfg, doc_id=document.id)
    ]


def write_chunk_manifest(path: str, chunks: Iterable[Chunk]) -> int:
    return write_jsonl(path, (
        {
            "doc_id": c.doc_id,
            "chunk_index": c.chunk_index,
            "token_start": c.token_start,
            "token_end": c.token_end,
        }
        for c in chunks
    ))


def instruct_query(task_definition: str, query: str) -> str:
    return "Instruct: " + task_definition + " Query: " + query


def truncate_query(tokens: Sequence[str], max_len: int = DEFAULT_MAX_QUERY_TOKENS) -> List[str]:
    if max_len < 1:
        raise InvalidInput("max_len must be at least 1")
    return list(tokens[:max_len])
