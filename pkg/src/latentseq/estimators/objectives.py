"""Variational objectives and the selection-model bounds."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .. import ndgrad as nd
from ..dists import BernoulliMF, DiagGaussian, bernoulli_kl, gaussian_kl, gaussian_rsample
from ..ndgrad import Value

# Selecting-ratio targets and CMI budgets (as fractions of the source length).
WIKIBIO_ALPHA, GIGAWORD_ALPHA = 0.35, 0.25
WIKIBIO_EPS_FRACTION, GIGAWORD_EPS_FRACTION = 0.15, 0.25


def cmi_budget(n_source: int, fraction: float = WIKIBIO_EPS_FRACTION) -> float:
    """KL budget ``eps`` proportional to the source length ``n``."""
    return fraction * n_source


def prior_mc_bound(
    logcond: Callable[[np.ndarray], np.ndarray],
    prior: DiagGaussian,
    n: int,
    rng: np.random.Generator,
) -> float:
    """Average of ``log p(x|z_i)`` over ``n`` prior draws.

    ``logcond`` is vectorized: it maps a ``[n, d]`` array of latents to ``n``
    log-likelihoods.  By Jensen the expectation is below ``log p(x)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    z = prior.sample(rng, n)
    values = np.asarray(nd.as_value(logcond(z)).data, dtype=np.float64)
    if values.shape != (n,):
        raise ValueError(f"logcond returned shape {values.shape}, expected ({n},)")
    return float(values.mean())


def elbo(
    logcond: Callable[[object, Value], Value],
    q: DiagGaussian,
    prior: DiagGaussian,
    x,
    n_samples: int = 1,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
) -> Value:
    """Reparameterized ELBO ``mean_i log p(x | z_i) - KL(q || prior)``.

    ``z_i = mean + std * eps_i`` with ``eps`` of shape ``[n_samples, *q.shape]``
    (drawn from ``rng`` when not supplied).  ``logcond(x, z)`` must return the
    log-likelihood with the sample axis first; any remaining axes (a batch of
    datapoints) are kept, so the result has ``q``'s batch shape.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    shape = (n_samples,) + q.mean.shape
    if eps is None:
        if rng is None:
            raise ValueError("pass either rng or eps")
        eps = rng.standard_normal(shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != shape:
        raise ValueError(f"eps shape {eps.shape} != {shape}")
    z = gaussian_rsample(q, eps)
    recon = nd.mean(nd.as_value(logcond(x, z)), axis=0)
    return recon - gaussian_kl(q, prior)


def soft_select_logprob(loglik: Callable[[Value], Value], gamma: BernoulliMF) -> Value:
    """``log p(Y | X, beta)`` evaluated once at the mean mask ``beta = gamma``."""
    return nd.as_value(loglik(gamma.probs))


def vrs_bound(loglik_hard: Callable[[np.ndarray], Value], q: BernoulliMF, prior: BernoulliMF, sample) -> Value:
    """Single-sample bound ``log p(Y | X, beta) - KL(q || prior)`` with ``beta ~ q``."""
    return nd.as_value(loglik_hard(np.asarray(sample, dtype=np.float64))) - bernoulli_kl(q, prior)


def cmi_objective(loglik, kl, eps: float, lam: float) -> Value:
    """``loglik - lam * |kl - eps|``; the subgradient at ``kl == eps`` is 0.

    ``eps`` may be an array matching a batch of ``kl`` values.
    """
    if lam < 0 or np.any(np.asarray(eps) < 0):
        raise ValueError("need lam >= 0 and eps >= 0")
    return nd.as_value(loglik) - lam * nd.vabs(nd.as_value(kl) - eps)


def ratio_penalty(nll, gamma_mean, alpha: float, lam: float) -> Value:
    """Loss ``nll + lam * |mean(gamma) - alpha|`` keeping the selection rate near ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return nd.as_value(nll) + lam * nd.vabs(nd.as_value(gamma_mean) - alpha)


def vrs_objective(loglik_hard, q: BernoulliMF, prior: BernoulliMF, sample, eps: float, lam: float) -> Value:
    """CMI-constrained selection objective ``bound - lam * |KL(q || prior) - eps|``.

    With ``lam = 0`` this is exactly :func:`vrs_bound`.
    """
    return cmi_objective(vrs_bound(loglik_hard, q, prior, sample), bernoulli_kl(q, prior), eps, lam)
