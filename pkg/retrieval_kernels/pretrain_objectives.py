"""
Sequence construction, masking and the decoder loss for RetroMAE-style
pretraining on plain text and on tables paired with summaries.
"""
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidConfig, InvalidInput
from .utils import read_jsonl

logger = logging.getLogger(__name__)

CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"
MARKERS = frozenset((CLS, SEP))

ENCODER_MASK_RATIO = 0.2
DECODER_MASK_RATIO = 0.6
DEFAULT_KEEP_RATIO = 1.0 - DECODER_MASK_RATIO


@dataclass
class TableDoc:
    """A table with header tokens, row-major cell tokens and a summary.

    ``cells`` holds one token per cell. ``metadata`` tokens are appended to the
    summary stream when the decoder sequence is built.
    """

    headers: List[str]
    cells: List[str]
    summary: List[str]
    n_rows: int = 0
    n_cols: int = 0
    metadata: List[str] = field(default_factory=list)
    synthetic_pending: bool = False
    id: str = ""

    def __post_init__(self):
        if len(self.cells) != self.n_rows * self.n_cols:
            raise InvalidInput(
                f"table {self.id!r}: {len(self.cells)} cells for a "
                f"{self.n_rows}x{self.n_cols} table"
            )
        if not self.summary and not self.synthetic_pending:
            raise InvalidInput(
                f"table {self.id!r}: empty summary without synthetic_pending"
            )

    @classmethod
    def from_rows(cls, headers, rows, summary, **kwargs) -> "TableDoc":
        rows = [list(r) for r in rows]
        n_cols = len(rows[0]) if rows else 0
        if any(len(r) != n_cols for r in rows):
            raise InvalidInput(f"table {kwargs.get('id', '')!r}: ragged rows")
        cells = [c for r in rows for c in r]
        return cls(list(headers), cells, list(summary), len(rows), n_cols, **kwargs)


@dataclass(frozen=True)
class MaskPlan:
    masked_positions: Tuple[int, ...]
    ratio: float
    seed: int


@dataclass(frozen=True)
class AttentionMatrix:
    allow: np.ndarray

    @property
    def length(self) -> int:
        return int(self.allow.shape[0])


def round_half_away(x: Decimal) -> int:
    return int(x.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def mask_count(length: int, ratio: float) -> int:
    return round_half_away(Decimal(str(ratio)) * length)


def build_text_sequence(tokens: Sequence[str]) -> List[str]:
    return [CLS, *tokens, SEP]


def build_table_sequence(table: TableDoc) -> Tuple[List[str], List[str]]:
    """Encoder sequence ``T`` of the table and decoder sequence ``S`` of its summary."""
    t = [CLS, *table.headers, SEP, *table.cells, SEP]
    s = [CLS, *table.summary, *table.metadata]
    return t, s


def split_table_sequence(t: Sequence[str]) -> Tuple[List[str], List[str]]:
    """Recover (headers, cells) from an encoder sequence built by ``build_table_sequence``."""
    if len(t) < 3 or t[0] != CLS or t[-1] != SEP:
        raise InvalidInput("not a table sequence")
    body = list(t[1:-1])
    sep = body.index(SEP)
    return body[:sep], body[sep + 1:]


def sample_masks(
    maskable_length: int,
    ratio: float,
    seed: int,
    offset: int = 0,
) -> MaskPlan:
    """Pick ``round(ratio * maskable_length)`` positions uniformly without replacement.

    Positions are drawn from ``offset .. offset + maskable_length - 1`` so that
    a leading [CLS] slot can be skipped with ``offset=1``.
    """
    if not 0.0 < ratio < 1.0:
        raise InvalidConfig(f"mask ratio must lie in (0, 1), got {ratio}")
    if maskable_length < 0:
        raise InvalidInput("maskable_length must be non-negative")
    count = mask_count(maskable_length, ratio)
    rng = np.random.default_rng(seed)
    picked = rng.choice(maskable_length, size=count, replace=False) + offset
    return MaskPlan(tuple(sorted(int(p) for p in picked)), ratio, seed)


def mask_sequence(
    sequence: Sequence[str], ratio: float, seed: int
) -> Tuple[List[str], MaskPlan]:
    """Mask a built sequence, never touching [CLS]/[SEP] slots."""
    slots = [i for i, tok in enumerate(sequence) if tok not in MARKERS]
    local = sample_masks(len(slots), ratio, seed)
    positions = tuple(slots[p] for p in local.masked_positions)
    masked = list(sequence)
    for p in positions:
        masked[p] = MASK
    return masked, MaskPlan(positions, ratio, seed)


def m1_attention_mask(
    length: int, keep_ratio: float = DEFAULT_KEEP_RATIO, seed: int = 0
) -> AttentionMatrix:
    """Per-row restricted attention for enhanced decoding.

    Row 0 sees everything. Every other row sees a seeded random subset of
    ``round(keep_ratio * (length - 1))`` other positions which always includes
    position 0 and never the row itself.
    """
    if length < 2:
        raise InvalidInput("attention mask needs length >= 2")
    if not 0.0 < keep_ratio <= 1.0:
        raise InvalidConfig(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    size = max(1, mask_count(length - 1, keep_ratio))
    rng = np.random.default_rng(seed)
    allow = np.zeros((length, length), dtype=bool)
    allow[0, :] = True
    for i in range(1, length):
        allow[i, 0] = True
        others = np.array([j for j in range(1, length) if j != i], dtype=np.int64)
        if size > 1:
            allow[i, rng.choice(others, size=size - 1, replace=False)] = True
    return AttentionMatrix(allow)


def table_retromae_decoder_loss(
    predicted_logprobs: np.ndarray,
    mask: MaskPlan,
    true_tokens: Sequence[int],
) -> float:
    """Summed negative log-probability of the true token at each masked position.

    ``predicted_logprobs`` is (sequence length, vocab) of log-probabilities and
    ``true_tokens`` holds token ids over the same sequence positions.
    """
    logp = np.asarray(predicted_logprobs, dtype=np.float64)
    if logp.ndim != 2:
        raise InvalidInput("predicted_logprobs must be (length, vocab)")
    total = 0.0
    for pos in mask.masked_positions:
        if pos >= logp.shape[0] or pos >= len(true_tokens):
            raise InvalidInput(f"no prediction for masked position {pos}")
        row = logp[pos]
        mass = float(np.exp(row).sum())
        if abs(mass - 1.0) > 1e-6:
            raise InvalidInput(
                f"position {pos}: distribution sums to {mass:.8f}, not 1"
            )
        total -= float(row[true_tokens[pos]])
    return total


def _cell_token(tokenizer, cell, row: int, col: int) -> str:
    tokens = tokenizer.tokenize(str(cell))
    if len(tokens) != 1:
        raise InvalidInput(
            f"cell ({row}, {col}) must be exactly one token, got {len(tokens)}: {str(cell)!r}"
        )
    return tokens[0]


def read_tables(path: str, tokenizer) -> List[TableDoc]:
    """Read line-delimited ``{id, headers, cells, summary, metadata?, synthetic_pending?}``.

    Header, cell, summary and metadata strings are tokenized with ``tokenizer``.
    Every cell must tokenize to exactly one token; empty and multi-token cells
    are rejected.
    """
    tables = []
    seen = set()
    for lineno, record in read_jsonl(path):
        try:
            table_id = str(record["id"])
            headers = [t for h in record.get("headers", []) for t in tokenizer.tokenize(h)]
            rows = [
                [_cell_token(tokenizer, c, r, col) for col, c in enumerate(row)]
                for r, row in enumerate(record.get("cells", []))
            ]
            summary = tokenizer.tokenize(record.get("summary") or "")
            metadata = tokenizer.tokenize(record.get("metadata") or "")
            pending = bool(record.get("synthetic_pending", False))
        except (KeyError, TypeError) as e:
            raise InvalidInput(f"{path}:{lineno}: malformed table record: {e}") from e
        except InvalidInput as e:
            raise InvalidInput(f"{path}:{lineno}: {e}") from e
        if table_id in seen:
            raise InvalidInput(f"{path}:{lineno}: duplicate table id {table_id!r}")
        seen.add(table_id)
        try:
            tables.append(TableDoc.from_rows(
                headers, rows, summary,
                metadata=metadata, synthetic_pending=pending, id=table_id,
            ))
        except InvalidInput as e:
            raise InvalidInput(f"{path}:{lineno}: {e}") from e
    logger.debug("read %d tables from %s", len(tables), path)
    return tables
