"""
Similarity functions, the three training losses with closed-form gradients,
and learning-rate schedules.

Everything here is a pure function of its inputs. Losses take embeddings or
score vectors supplied by the caller and return a ``LossResult`` whose
``grad`` mirrors the shape of the inputs it differentiates.
"""
import math
from dataclasses import dataclass
from typing import Any, List, Sequence

import numpy as np
from pydantic import Field, model_validator

from .errors import InvalidConfig, InvalidInput
from .utils import KernelConfig

PLISTMLE_WEIGHTINGS = ("exponential", "uniform", "literal")


class Embedding:
    """Fixed-dimension real vector. Values are copied and frozen on construction."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidInput("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("embedding values must be finite")
        arr.setflags(write=False)
        self.values = arr

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim})"


def stack(embeddings: Sequence[Embedding]) -> np.ndarray:
    """Stack embeddings into an (n, dim) matrix, checking they share one dim."""
    if not embeddings:
        raise InvalidInput("nothing to stack")
    dim = embeddings[0].dim
    for e in embeddings:
        if e.dim != dim:
            raise InvalidInput(f"dimension mismatch: {e.dim} != {dim}")
    return np.vstack([e.values for e in embeddings])


class ContrastiveConfig(KernelConfig):
    tau: float = Field(0.05, gt=0)
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(1.0, ge=0)
    gamma: float = Field(1.0, ge=0)


class LrScheduleConfig(KernelConfig):
    """Warmup-stable-decay schedule.

    ``decay_start_lr`` defaults to ``peak_lr``; a smaller value models a stage
    change and makes the schedule drop at the stable/decay boundary.
    """

    peak_lr: float = Field(8e-4, gt=0)
    warmup_steps: int = Field(0, ge=0)
    stable_steps: int = Field(0, ge=0)
    decay_steps: int = Field(0, ge=0)
    decay_start_lr: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.warmup_steps + self.stable_steps + self.decay_steps <= 0:
            raise ValueError("schedule must span at least one step")
        if self.decay_start_lr is not None and self.decay_start_lr > self.peak_lr:
            raise ValueError("decay_start_lr must not exceed peak_lr")
        return self

    @property
    def decay_lr(self) -> float:
        return self.peak_lr if self.decay_start_lr is None else self.decay_start_lr


@dataclass
class TrainingBatch:
    """Queries and, per query, an ordered candidate list whose index 0 is the positive."""

    queries: List[Embedding]
    passages: List[List[Embedding]]

    def __post_init__(self):
        if len(self.queries) != len(self.passages):
            raise InvalidInput(
                f"{len(self.queries)} queries but {len(self.passages)} passage lists"
            )
        dims = {q.dim for q in self.queries}
        for i, plist in enumerate(self.passages):
            if not plist:
                raise InvalidInput(f"query {i} has an empty passage list")
            dims.update(p.dim for p in plist)
        if len(dims) > 1:
            raise InvalidInput(f"batch mixes dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.queries)


@dataclass
class LossResult:
    value: float
    grad: Any
    per_item: np.ndarray | None = None


def _check_pair(u: Embedding, v: Embedding) -> None:
    if u.dim != v.dim:
        raise InvalidInput(f"dimension mismatch: {u.dim} != {v.dim}")


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise InvalidConfig(f"temperature must be positive, got {tau}")


def logsumexp(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / e.sum()


def cosine_similarity(u: Embedding, v: Embedding) -> float:
    _check_pair(u, v)
    nu, nv = u.norm(), v.norm()
    if nu == 0.0 or nv == 0.0:
        raise InvalidInput("cosine similarity of a zero-norm vector")
    c = float(np.dot(u.values, v.values) / (nu * nv))
    return min(1.0, max(-1.0, c))


def scaled_similarity(u: Embedding, v: Embedding, tau: float) -> float:
    _check_tau(tau)
    return cosine_similarity(u, v) / tau


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity between every row of ``a`` (n, d) and of ``b`` (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise InvalidInput(f"dimension mismatch: {a.shape[1]} != {b.shape[1]}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise InvalidInput("cosine similarity of a zero-norm vector")
    return np.clip((a / na[:, None]) @ (b / nb[:, None]).T, -1.0, 1.0)


def softmax_cross_entropy(scores: Sequence[float], target_index: int) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    return -float(scores[target_index]) + logsumexp(scores)


def _cosine_with_grads(u: np.ndarray, v: np.ndarray):
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise InvalidInput("cosine similarity of a zero-norm vector")
    c = float(np.dot(u, v) / (nu * nv))
    du = v / (nu * nv) - c * u / (nu * nu)
    dv = u / (nu * nv) - c * v / (nv * nv)
    return c, du, dv


def contrastive_loss(batch: TrainingBatch, cfg: ContrastiveConfig) -> LossResult:
    """Contrastive loss with an extended partition function.

    For query i the partition sums the positive term, alpha-weighted
    query/negative terms, beta-weighted terms against every other query in the
    batch and gamma-weighted positive/negative terms. The loss is the mean over
    queries of ``-log(exp(s(q_i, p_i0)) / Z_i)``.

    ``grad`` is a dict with ``"queries"`` (n, dim) and ``"passages"``, a list
    of (m_i, dim) arrays aligned with ``batch.passages``.
    """
    n = len(batch)
    if n == 0:
        raise InvalidInput("empty batch")
    tau = cfg.tau

    queries = [q.values for q in batch.queries]
    passages = [[p.values for p in plist] for plist in batch.passages]
    grad_q = [np.zeros_like(q) for q in queries]
    grad_p = [[np.zeros_like(p) for p in plist] for plist in passages]

    def vector(ref):
        return queries[ref[1]] if ref[0] == "q" else passages[ref[1]][ref[2]]

    def grad_slot(ref):
        return grad_q[ref[1]] if ref[0] == "q" else grad_p[ref[1]][ref[2]]

    per_query = np.empty(n)
    for i in range(n):
        # (weight, left, right); the positive term is always first
        terms = [(1.0, ("q", i), ("p", i, 0))]
        negatives = range(1, len(passages[i]))
        if cfg.alpha > 0:
            terms.extend((cfg.alpha, ("q", i), ("p", i, j)) for j in negatives)
        if cfg.beta > 0:
            terms.extend((cfg.beta, ("q", i), ("q", k)) for k in range(n) if k != i)
        if cfg.gamma > 0:
            terms.extend((cfg.gamma, ("p", i, 0), ("p", i, j)) for j in negatives)

        sims = []
        partials = []
        for _, left, right in terms:
            c, d_left, d_right = _cosine_with_grads(vector(left), vector(right))
            sims.append(c / tau)
            partials.append((d_left / tau, d_right / tau))
        sims = np.array(sims)
        logits = np.log([w for w, _, _ in terms]) + sims
        log_z = logsumexp(logits)
        per_query[i] = log_z - sims[0]

        # dL_i/ds_k = w_k e^{s_k} / Z_i - [k is the positive]
        coeff = np.exp(logits - log_z)
        coeff[0] -= 1.0
        coeff /= n
        for c_k, (_, left, right), (d_left, d_right) in zip(coeff, terms, partials):
            grad_slot(left)[...] += c_k * d_left
            grad_slot(right)[...] += c_k * d_right

    return LossResult(
        value=float(per_query.mean()),
        grad={"queries": np.vstack(grad_q), "passages": [np.vstack(g) for g in grad_p]},
        per_item=per_query,
    )


def distillation_loss(
    student_scores: Sequence[Sequence[float]],
    teacher_scores: Sequence[Sequence[float]],
    tau_kd: float,
) -> LossResult:
    """Cross entropy of the student's score distribution against the teacher's.

    Both distributions are temperature-``tau_kd`` softmaxes over each query's
    own candidate list. The value is summed over queries; ``grad`` is a list of
    per-query arrays holding the derivative with respect to the student scores.
    """
    _check_tau(tau_kd)
    if len(student_scores) != len(teacher_scores):
        raise InvalidInput(
            f"{len(student_scores)} student lists but {len(teacher_scores)} teacher lists"
        )
    if not student_scores:
        raise InvalidInput("no queries to distill")

    per_query = np.empty(len(student_scores))
    grads = []
    for i, (s, t) in enumerate(zip(student_scores, teacher_scores)):
        s = np.asarray(s, dtype=np.float64) / tau_kd
        t = np.asarray(t, dtype=np.float64) / tau_kd
        if s.ndim != 1 or s.shape != t.shape or s.size == 0:
            raise InvalidInput(
                f"query {i}: student has {s.size} scores, teacher has {t.size}"
            )
        p_t = softmax(t)
        log_p_s = s - logsumexp(s)
        per_query[i] = -float(np.dot(p_t, log_p_s))
        grads.append((np.exp(log_p_s) - p_t) / tau_kd)

    return LossResult(value=float(per_query.sum()), grad=grads, per_item=per_query)


def plistmle_weights(n: int, weighting: str = "exponential") -> np.ndarray:
    """Position weights for positions 1..n."""
    if weighting not in PLISTMLE_WEIGHTINGS:
        raise InvalidConfig(f"unknown weighting {weighting!r}")
    positions = np.arange(1, n + 1, dtype=np.float64)
    if weighting == "exponential":
        return np.exp2(n - positions) - 1.0
    if weighting == "uniform":
        return np.ones(n)
    return np.full(n, 2.0 ** (n - 1) - 1.0)


def order_from_labels(labels: Sequence[float]) -> np.ndarray:
    """Target permutation that lists items by descending label, ties kept in input order."""
    return np.argsort(-np.asarray(labels, dtype=np.float64), kind="stable")


def plistmle_loss(
    scores: Sequence[float],
    target_order: Sequence[int],
    n: int | None = None,
    weighting: str = "exponential",
) -> LossResult:
    """Position-weighted listwise likelihood loss.

    ``sum_i w(i) * (-z[y_i] + log sum_{k>=i} exp(z[y_k]))`` with, by default,
    ``w(i) = 2**(n-i) - 1``. Not averaged; callers average over lists.
    """
    z = np.asarray(scores, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidInput("scores must be a flat list")
    if n is None:
        n = z.shape[0]
    if z.shape[0] != n:
        raise InvalidInput(f"expected {n} scores, got {z.shape[0]}")
    y = np.asarray(target_order)
    if y.shape != (n,) or not np.array_equal(np.sort(y), np.arange(n)):
        raise InvalidInput(f"target order is not a permutation of 0..{n - 1}")

    w = plistmle_weights(n, weighting)
    zy = z[y]
    # lse[i] = log sum_{k >= i} exp(zy[k])
    lse = np.logaddexp.accumulate(zy[::-1])[::-1]
    value = float(np.dot(w, lse - zy))

    # probs[i, k] = softmax of zy over the suffix starting at i, zero before it
    probs = np.triu(np.exp(zy[None, :] - lse[:, None]))
    grad_sorted = w @ probs - w
    grad = np.empty(n)
    grad[y] = grad_sorted
    return LossResult(value=value, grad=grad)


def lr_at_step(step: int, cfg: LrScheduleConfig) -> float:
    """Learning rate after ``step`` optimizer steps; 0 past the end of the schedule."""
    step = max(int(step), 0)
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    step -= cfg.warmup_steps
    if step < cfg.stable_steps:
        return cfg.peak_lr
    t = step - cfg.stable_steps
    if t >= cfg.decay_steps:
        return 0.0
    return cfg.decay_lr * (1.0 - math.sqrt(t / cfg.decay_steps))


@dataclass(frozen=True)
class TrainingStage:
    name: str
    schedule: LrScheduleConfig
    rope_theta: float
    context_length: int


# name -> (peak_lr, warmup fraction, stable fraction, decay fraction, theta, context)
_STAGES = {
    "pretrain": (8e-4, 3 / 2000, 1 - 3 / 2000, 0.0, 10_000.0, 1024),
    "context_extension": (3e-4, 0.0, 1.0, 0.0, 160_000.0, 8192),
    "decay": (3e-4, 0.0, 0.0, 1.0, 160_000.0, 8192),
    # decay shape after warmup is unstated for the reranker; held constant
    "reranker": (2e-4, 0.15, 0.85, 0.0, 80_000.0, 8192),
}


def training_stage(name: str, total_steps: int) -> TrainingStage:
    """Schedule and positional settings for one named training stage."""
    if name not in _STAGES:
        raise InvalidConfig(f"unknown training stage {name!r}; known: {sorted(_STAGES)}")
    if total_steps < 1:
        raise InvalidConfig("total_steps must be positive")
    peak, warm, stable, decay, theta, context = _STAGES[name]
    warmup_steps = int(round(warm * total_steps))
    decay_steps = int(round(decay * total_steps))
    stable_steps = max(total_steps - warmup_steps - decay_steps, 0) if stable else 0
    if warmup_steps + stable_steps + decay_steps == 0:
        stable_steps = total_steps
    return TrainingStage(
        name=name,
        schedule=LrScheduleConfig(
            peak_lr=peak,
            warmup_steps=warmup_steps,
            stable_steps=stable_steps,
            decay_steps=decay_steps,
        ),
        rope_theta=theta,
        context_length=context,
    )
