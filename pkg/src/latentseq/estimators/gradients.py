"""Monte-Carlo gradient estimators with per-sample variance reporting."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import Value


@dataclass
class EstimatorReport:
    grad_mean: np.ndarray
    grad_var: np.ndarray
    n_samples: int
    wall_time: float = 0.0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("a report needs at least two samples")
        if np.any(self.grad_var < 0):
            raise ValueError("negative variance")

    @classmethod
    def from_terms(cls, terms: np.ndarray, wall_time: float = 0.0) -> "EstimatorReport":
        """Summarize per-sample gradient terms of shape ``[n, *param_shape]``."""
        terms = np.asarray(terms, dtype=np.float64)
        n = terms.shape[0]
        if n < 2:
            raise ValueError("variance needs n >= 2 samples")
        return cls(terms.mean(axis=0), terms.var(axis=0, ddof=1), n, wall_time)

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.grad_var / self.n_samples)

    def z_scores(self, exact) -> np.ndarray:
        """``|mean - exact| / SE`` per coordinate (inf where SE is 0 and the gap is not)."""
        gap = np.abs(self.grad_mean - np.asarray(exact, dtype=np.float64))
        se = self.standard_error
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, gap / np.where(se > 0, se, 1.0), np.where(gap > 0, np.inf, 0.0))


def combine_reports(reports: Sequence[EstimatorReport]) -> EstimatorReport:
    """Pool independent reports through their sufficient statistics."""
    if not reports:
        raise ValueError("nothing to combine")
    n = sum(r.n_samples for r in reports)
    mean = sum(r.grad_mean * r.n_samples for r in reports) / n
    # within-report sums of squares plus between-report spread
    ss = sum(r.grad_var * (r.n_samples - 1) + r.n_samples * (r.grad_mean - mean) ** 2 for r in reports)
    return EstimatorReport(mean, ss / (n - 1), n, sum(r.wall_time for r in reports))


class MovingAverageBaseline:
    """Exponential moving average of past mean rewards.

    The value used for a batch depends only on earlier batches, so it is a
    sample-independent constant as far as the current estimate is concerned.
    """

    def __init__(self, decay: float = 0.95, initial: float = 0.0):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.value = initial

    def update(self, rewards) -> None:
        self.value = self.decay * self.value + (1.0 - self.decay) * float(np.mean(rewards))


def per_sample_grads(theta, n: int, objective: Callable[[Value], Value]) -> np.ndarray:
    """Gradients of each of ``n`` per-sample objectives with respect to its own copy of ``theta``.

    ``objective`` receives a ``[n, *theta.shape]`` Value whose rows all equal
    ``theta`` and returns ``n`` scalars; one backward pass yields every row's
    gradient because row ``i`` only feeds objective ``i``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    rows = Value(np.broadcast_to(theta, (n,) + theta.shape).copy(), requires_grad=True)
    out = nd.as_value(objective(rows))
    if out.shape != (n,):
        raise ValueError(f"objective returned shape {out.shape}, expected ({n},)")
    nd.backward(nd.vsum(out))
    return rows.grad


def _baseline_value(baseline, theta) -> float:
    if isinstance(baseline, MovingAverageBaseline):
        return baseline.value
    if callable(baseline):
        return float(baseline(theta))
    return float(baseline)


def score_function_grad(
    logq: Callable[[Value, np.ndarray], Value],
    reward: Callable[[np.ndarray], np.ndarray],
    baseline,
    n: int,
    *,
    theta,
    sample: Callable[[np.ndarray, np.random.Generator, int], np.ndarray],
    rng: np.random.Generator,
) -> EstimatorReport:
    """REINFORCE: mean of ``(reward(s) - b) * grad log q_theta(s)`` over ``n`` draws.

    ``sample(theta, rng, n)`` draws ``n`` samples; ``logq(theta_rows, samples)``
    returns their log-probabilities with ``theta`` repeated per row.  The
    baseline may be a number, a function of ``theta`` or a
    :class:`MovingAverageBaseline` (updated after the estimate).
    """
    if n < 2:
        raise ValueError("score_function_grad needs n >= 2 to report a variance")
    start = time.perf_counter()
    theta = np.asarray(theta, dtype=np.float64)
    samples = sample(theta, rng, n)
    rewards = np.asarray(reward(samples), dtype=np.float64)
    b = _baseline_value(baseline, theta)
    scores = per_sample_grads(theta, n, lambda rows: logq(rows, samples))
    weights = (rewards - b).reshape((n,) + (1,) * theta.ndim)
    terms = weights * scores
    if isinstance(baseline, MovingAverageBaseline):
        baseline.update(rewards)
    return EstimatorReport.from_terms(terms, time.perf_counter() - start)


def pathwise_grad(
    objective: Callable[[Value, np.random.Generator], Value],
    n: int,
    *,
    theta,
    rng: np.random.Generator,
) -> EstimatorReport:
    """Reparameterized estimator: per-sample gradients of ``objective(theta_rows, rng)``."""
    if n < 2:
        raise ValueError("pathwise_grad needs n >= 2 to report a variance")
    start = time.perf_counter()
    terms = per_sample_grads(theta, n, lambda rows: objective(rows, rng))
    return EstimatorReport.from_terms(terms, time.perf_counter() - start)
