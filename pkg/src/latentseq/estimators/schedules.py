"""Anti-collapse schedules and auxiliary losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import Value

KINDS = ("linear-kl-anneal", "scheduled-sampling", "temperature-decay")


@dataclass(frozen=True)
class AnnealSchedule:
    """Piecewise-linear schedule over ``horizon`` steps.

    ``linear-kl-anneal`` rises from ``floor`` to ``ceiling``; the other two
    kinds fall from ``ceiling`` to ``floor``.  Weight schedules must stay in
    [0, 1]; a temperature only needs a positive floor.
    """

    kind: str
    horizon: int
    floor: float = 0.0
    ceiling: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.floor > self.ceiling:
            raise ValueError("floor exceeds ceiling")
        if self.kind == "temperature-decay":
            if self.floor <= 0:
                raise ValueError("temperature floor must be positive")
        elif not 0.0 <= self.floor <= self.ceiling <= 1.0:
            raise ValueError("weight schedules need 0 <= floor <= ceiling <= 1")

    def progress(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        return min(step / self.horizon, 1.0)

    def __call__(self, step: int) -> float:
        t = self.progress(step)
        if self.kind == "linear-kl-anneal":
            return self.floor + (self.ceiling - self.floor) * t
        return self.ceiling - (self.ceiling - self.floor) * t


def kl_anneal_weight(step: int, schedule: AnnealSchedule | int) -> float:
    """KL weight at ``step``: 0 at the start, 1 from the horizon on.

    An integer ``schedule`` is shorthand for a 0 -> 1 ramp of that length.
    """
    if isinstance(schedule, int):
        schedule = AnnealSchedule("linear-kl-anneal", schedule)
    if schedule.kind != "linear-kl-anneal":
        raise ValueError("kl_anneal_weight needs a linear-kl-anneal schedule")
    return schedule(step)


def scheduled_sampling_p(i: int, k: int) -> float:
    """Probability of feeding the gold token: ``max(1 - i/k, 0)``."""
    if k <= 0:
        raise ValueError("k must be positive")
    if i < 0:
        raise ValueError("i must be >= 0")
    return max(1.0 - i / k, 0.0)


def free_bits_kl(kl_per_dim, eps: float, mode: str = "per-dim") -> Value:
    """KL with a floor: ``sum_i max(kl_i, eps)`` or ``max(sum_i kl_i, eps)`` (``mode="total"``).

    Below the floor the term is constant, so it sends no gradient; a value
    exactly at the floor passes its gradient through.
    """
    kl = nd.as_value(kl_per_dim)
    if np.any(kl.data < 0):
        raise ValueError("per-dimension KL must be non-negative")
    if mode == "per-dim":
        return nd.vsum(nd.maximum(kl, eps))
    if mode == "total":
        return nd.maximum(nd.vsum(kl), eps)
    raise ValueError(f"mode must be 'per-dim' or 'total', got {mode!r}")


def word_dropout(tokens, keep_rate: float, rng: np.random.Generator, unk_id: int = 1) -> np.ndarray:
    """Replace each token except the first (per row) by ``unk_id`` with probability ``1 - keep_rate``."""
    if not 0.0 <= keep_rate <= 1.0:
        raise ValueError("keep_rate must lie in [0, 1]")
    tokens = np.array(tokens, dtype=int)
    keep = rng.random(tokens.shape) < keep_rate
    keep[..., 0] = True
    return np.where(keep, tokens, unk_id)


def bow_loss(z, target_tokens, inputless_logits: Callable[[object], Value]) -> Value:
    """Bag-of-words loss ``-sum_t log softmax(f(z))[y_t]``; word order does not matter."""
    target = np.asarray(target_tokens, dtype=int)
    if target.size == 0:
        raise ValueError("target must be non-empty")
    log_p = nd.log_softmax(nd.as_value(inputless_logits(z)), axis=-1)
    counts = np.bincount(target.reshape(-1), minlength=log_p.shape[-1]).astype(np.float64)
    return -nd.vsum(log_p * counts)
