"""Rotary position embeddings and the global/local attention layer schedule."""
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np
from pydantic import Field, field_validator

from .errors import InvalidConfig, InvalidInput
from .math_kernels import Embedding
from .utils import KernelConfig

GLOBAL = "global"
LOCAL = "local"
GLOBAL_EVERY = 3
THETA_SWEEP = (20_000.0, 40_000.0, 80_000.0, 160_000.0)


class RopeConfig(KernelConfig):
    head_dim: int = Field(64, gt=0)
    global_theta: float = Field(80_000.0, gt=0)
    local_theta: float = Field(10_000.0, gt=0)

    @field_validator("head_dim")
    @classmethod
    def _even(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"head_dim must be even, got {v}")
        return v

    def theta(self, which: str) -> float:
        if which == GLOBAL:
            return self.global_theta
        if which == LOCAL:
            return self.local_theta
        raise InvalidConfig(f"unknown attention kind {which!r}")


@dataclass(frozen=True)
class LayerSchedule:
    flags: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.flags)

    @property
    def global_layers(self) -> List[int]:
        return [i for i, f in enumerate(self.flags) if f == GLOBAL]


def rope_frequencies(cfg: RopeConfig, which: Literal["global", "local"]) -> np.ndarray:
    """``theta ** (-2k / head_dim)`` for ``k = 0 .. head_dim/2 - 1``."""
    if cfg.head_dim % 2:
        raise InvalidConfig(f"head_dim must be even, got {cfg.head_dim}")
    k = np.arange(cfg.head_dim // 2, dtype=np.float64)
    return cfg.theta(which) ** (-2.0 * k / cfg.head_dim)


def rope_table(positions: Sequence[int], freqs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """cos and sin of ``position * freq``, each (len(positions), len(freqs))."""
    angles = np.outer(np.asarray(positions, dtype=np.float64), freqs)
    return np.cos(angles), np.sin(angles)


def apply_rope(v: Embedding, position: int, freqs: np.ndarray) -> Embedding:
    """Rotate each adjacent pair ``(v[2k], v[2k+1])`` by ``position * freqs[k]``."""
    freqs = np.asarray(freqs, dtype=np.float64)
    if v.dim != 2 * freqs.shape[0]:
        raise InvalidInput(
            f"vector of dim {v.dim} needs {v.dim // 2} frequencies, got {freqs.shape[0]}"
        )
    if position < 0:
        raise InvalidInput("position must be non-negative")
    angle = position * freqs
    cos, sin = np.cos(angle), np.sin(angle)
    even, odd = v.values[0::2], v.values[1::2]
    out = np.empty_like(v.values)
    out[0::2] = even * cos - odd * sin
    out[1::2] = even * sin + odd * cos
    return Embedding(out)


def attention_schedule(num_layers: int, offset: int = 0) -> LayerSchedule:
    """Global attention on layers with ``(i - offset) % 3 == 0``, local elsewhere."""
    if num_layers < 1:
        raise InvalidInput("num_layers must be at least 1")
    return LayerSchedule(tuple(
        GLOBAL if (i - offset) % GLOBAL_EVERY == 0 else LOCAL
        for i in range(num_layers)
    ))


def layer_thetas(schedule: LayerSchedule, cfg: RopeConfig) -> List[float]:
    return [cfg.theta(flag) for flag in schedule.flags]


def scale_theta(cfg: RopeConfig, new_global_theta: float) -> RopeConfig:
    """Replace the global-layer theta; local layers keep theirs."""
    if not new_global_theta > 0:
        raise InvalidConfig(f"theta must be positive, got {new_global_theta}")
    return cfg.model_copy(update={"global_theta": float(new_global_theta)})
