"""Amortized reparameterized ELBO training on the conjugate linear-Gaussian toy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import ndgrad as nd
from ..dists import DiagGaussian, gaussian_kl
from ..estimators import LinearGaussianToy, elbo
from ..ndgrad import Adam, Params


@dataclass
class VaeFit:
    params: dict[str, np.ndarray]
    steps: int
    elbos: list[float] = field(default_factory=list)
    posterior_kls: list[float] = field(default_factory=list)

    @property
    def final_kl(self) -> float:
        return self.posterior_kls[-1]


def _encoder(params: Params, x: np.ndarray) -> DiagGaussian:
    """``q(z | x) = N(a x + b, exp(log_std)^2)`` for a column of observations."""
    col = x[:, None]
    mean = nd.broadcast_to(params["q.a"], col.shape) * col + nd.broadcast_to(params["q.b"], col.shape)
    return DiagGaussian(mean, nd.broadcast_to(params["q.log_std"], col.shape))


def posterior_kl(toy: LinearGaussianToy, params: Params, x: np.ndarray) -> float:
    """Mean over ``x`` of KL(q(z|x) || p(z|x)) against the closed-form posterior."""
    mean, std = toy.posterior(x)
    exact = DiagGaussian(mean[:, None], np.full((len(x), 1), np.log(std)))
    return float(np.mean(gaussian_kl(_encoder(params, x), exact).data))


def fit_conjugate_vae(
    toy: LinearGaussianToy = LinearGaussianToy(),
    n_data: int = 256,
    steps: int = 5000,
    n_samples: int = 8,
    lr: float = 0.05,
    lr_decay: float = 0.999,
    tol: float | None = None,
    seed: int = 0,
) -> VaeFit:
    """Maximize the reparameterized ELBO of a linear amortized encoder.

    The model's decoder is the known likelihood, so only the encoder is
    learned; the exact posterior lies in the encoder family and the ELBO
    optimum is KL(q || posterior) = 0.  The step size decays geometrically to
    damp Monte Carlo noise.  Training stops early once the posterior KL falls
    below ``tol`` (when given).
    """
    rng = np.random.default_rng(seed)
    x = toy.sample(rng, n_data)
    params = Params()
    params.add("q.a", np.zeros(1))
    params.add("q.b", np.zeros(1))
    params.add("q.log_std", np.zeros(1))
    prior = DiagGaussian(np.zeros((n_data, 1)), np.zeros((n_data, 1)))
    opt = Adam(params, lr=lr, clip_norm=None)
    fit = VaeFit({}, 0)
    for step in range(steps):
        params.zero_grad()
        bound = nd.mean(elbo(toy.logcond, _encoder(params, x), prior, x[:, None], n_samples=n_samples, rng=rng))
        nd.backward(-bound)
        opt.step()
        opt.lr *= lr_decay
        fit.elbos.append(float(bound.data))
        fit.posterior_kls.append(posterior_kl(toy, params, x))
        fit.steps = step + 1
        if tol is not None and fit.posterior_kls[-1] < tol:
            break
    fit.params = params.state()
    return fit
