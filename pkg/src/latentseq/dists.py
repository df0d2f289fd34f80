"""Latent-variable families: diagonal Gaussians, mean-field Bernoullis, categoricals.

All functions are pure; randomness enters only through explicit noise
arrays or a caller-owned ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .ndgrad import Value

LOG_STD_MIN, LOG_STD_MAX = -10.0, 10.0
PROB_FLOOR = 1e-7


@dataclass
class DiagGaussian:
    mean: Value
    log_std: Value

    def __post_init__(self):
        self.mean = nd.as_value(self.mean)
        self.log_std = nd.as_value(self.log_std)
        if self.mean.ndim < 1 or self.mean.shape[-1] < 1:
            raise ValueError("DiagGaussian needs at least one dimension")
        if self.mean.shape != self.log_std.shape:
            raise ValueError(f"mean {self.mean.shape} and log_std {self.log_std.shape} differ")
        if not np.all(np.isfinite(self.log_std.data)):
            raise ValueError("log_std must be finite")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def clamped_log_std(self) -> Value:
        return nd.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    @classmethod
    def standard(cls, dim: int) -> "DiagGaussian":
        return cls(np.zeros(dim), np.zeros(dim))

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = self.mean.shape if n is None else (n,) + self.mean.shape
        return self.mean.data + np.exp(self.clamped_log_std().data) * rng.standard_normal(shape)

    def log_prob(self, z) -> Value:
        """Log density summed over the last axis."""
        z = nd.as_value(z)
        log_std = self.clamped_log_std()
        if z.shape != self.mean.shape:
            mean = nd.broadcast_to(self.mean, z.shape)
            log_std = nd.broadcast_to(log_std, z.shape)
        else:
            mean = self.mean
        scaled = (z - mean) * nd.exp(-log_std)
        per_dim = -0.5 * nd.square(scaled) - log_std - 0.5 * np.log(2.0 * np.pi)
        return nd.vsum(per_dim, axis=-1)


@dataclass
class BernoulliMF:
    """Independent Bernoulli coordinates stored as logits."""

    logits: Value

    def __post_init__(self):
        self.logits = nd.as_value(self.logits)

    @classmethod
    def from_probs(cls, probs) -> "BernoulliMF":
        p = np.clip(np.asarray(probs, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
        return cls(np.log(p) - np.log1p(-p))

    @property
    def probs(self) -> Value:
        return nd.clip(nd.sigmoid(self.logits), PROB_FLOOR, 1.0 - PROB_FLOOR)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(self.logits.shape) < self.probs.data).astype(np.float64)

    def log_prob(self, mask) -> Value:
        """Log probability of a 0/1 mask, summed over the last axis."""
        mask = np.asarray(mask, dtype=np.float64)
        p = self.probs
        if mask.shape != p.shape:
            p = nd.broadcast_to(p, mask.shape)
        return nd.vsum(mask * nd.log(p) + (1.0 - mask) * nd.log(1.0 - p), axis=-1)


@dataclass
class CategoricalLogits:
    logits: Value

    def __post_init__(self):
        self.logits = nd.as_value(self.logits)

    @property
    def probs(self) -> Value:
        return nd.softmax(self.logits, axis=-1)

    def log_probs(self) -> Value:
        return nd.log_softmax(self.logits, axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.probs.data
        return rng.choice(p.shape[-1], size=n, p=p / p.sum())


def gaussian_kl(q: DiagGaussian, p: DiagGaussian) -> Value:
    """KL(q || p) between diagonal Gaussians, summed over the last axis."""
    if q.mean.shape != p.mean.shape:
        raise ValueError(f"dimension mismatch: {q.mean.shape} vs {p.mean.shape}")
    q_log_std, p_log_std = q.clamped_log_std(), p.clamped_log_std()
    var_ratio = nd.exp(2.0 * (q_log_std - p_log_std))
    mahalanobis = nd.square(p.mean - q.mean) * nd.exp(-2.0 * p_log_std)
    per_dim = 2.0 * (p_log_std - q_log_std) - 1.0 + var_ratio + mahalanobis
    return 0.5 * nd.vsum(per_dim, axis=-1)


def gaussian_rsample(q: DiagGaussian, eps) -> Value:
    """``mean + exp(log_std) * eps``; differentiable in both parameters."""
    eps = nd.as_value(eps)
    if eps.shape != q.mean.shape:
        mean = nd.broadcast_to(q.mean, eps.shape)
        log_std = nd.broadcast_to(q.clamped_log_std(), eps.shape)
    else:
        mean, log_std = q.mean, q.clamped_log_std()
    return mean + nd.exp(log_std) * eps


def bernoulli_kl(q: BernoulliMF, p: BernoulliMF) -> Value:
    """Sum over coordinates of KL(Bern(q_i) || Bern(p_i))."""
    if q.logits.shape != p.logits.shape:
        raise ValueError(f"length mismatch: {q.logits.shape} vs {p.logits.shape}")
    qp, pp = q.probs, p.probs
    on = qp * (nd.log(qp) - nd.log(pp))
    off = (1.0 - qp) * (nd.log(1.0 - qp) - nd.log(1.0 - pp))
    return nd.vsum(on + off, axis=-1)


def gumbel_noise(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -np.log(-np.log(u))


def gumbel_softmax(pi: CategoricalLogits, tau: float, u) -> Value:
    """Relaxed one-hot sample ``softmax((log pi + g) / tau)`` with Gumbel noise from ``u``."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    g = gumbel_noise(u)
    log_pi = pi.log_probs()
    if g.shape != log_pi.shape:
        log_pi = nd.broadcast_to(log_pi, g.shape)
    return nd.softmax((log_pi + g) * (1.0 / tau), axis=-1)


def one_hot_argmax(y: np.ndarray) -> np.ndarray:
    """One-hot of the argmax along the last axis; ties go to the lowest index."""
    y = np.asarray(y)
    hard = np.zeros_like(y, dtype=np.float64)
    np.put_along_axis(hard, np.argmax(y, axis=-1)[..., None], 1.0, axis=-1)
    return hard


def straight_through(y_soft) -> Value:
    """Hard one-hot forward, identity gradient back into ``y_soft``."""
    y_soft = nd.as_value(y_soft)
    return nd.straight_through(y_soft, one_hot_argmax(y_soft.data))


def straight_through_bernoulli(alpha) -> Value:
    """Forward ``1(alpha > 0.5)``, identity gradient back into ``alpha``."""
    alpha = nd.as_value(alpha)
    return nd.straight_through(alpha, (alpha.data > 0.5).astype(np.float64))
