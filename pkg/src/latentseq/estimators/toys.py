"""Small objectives whose exact gradients are available in closed form or by enumeration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ndgrad as nd
from ..dists import gumbel_noise, one_hot_argmax
from ..ndgrad import Value


def _softmax(theta: np.ndarray) -> np.ndarray:
    e = np.exp(theta - theta.max())
    return e / e.sum()


@dataclass
class CategoricalToy:
    """``E_{c ~ softmax(theta)} f(onehot(c))`` with ``f(y) = a.y + (b.y)^2``.

    ``f`` is defined on the whole simplex, so relaxed samples can be scored
    too; the quadratic part makes the relaxation genuinely biased.
    """

    name: str
    theta: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if not self.theta.shape == self.a.shape == self.b.shape:
            raise ValueError("theta, a and b must share one shape")

    @property
    def n_categories(self) -> int:
        return self.theta.shape[0]

    def outcome_rewards(self) -> np.ndarray:
        return self.a + self.b**2

    def value(self, theta=None) -> float:
        theta = self.theta if theta is None else np.asarray(theta)
        return float(_softmax(theta) @ self.outcome_rewards())

    def exact_grad(self, theta=None) -> np.ndarray:
        """Enumerated ``d/dtheta sum_c p_c f_c = p * (f - p.f)``."""
        theta = self.theta if theta is None else np.asarray(theta)
        p, f = _softmax(theta), self.outcome_rewards()
        return p * (f - p @ f)

    def sample(self, theta: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.n_categories, size=n, p=_softmax(theta))

    def logq(self, rows: Value, samples: np.ndarray) -> Value:
        return nd.log_softmax(rows, axis=-1)[np.arange(len(samples)), samples]

    def reward(self, samples: np.ndarray) -> np.ndarray:
        return self.outcome_rewards()[samples]

    def relaxed_reward(self, y: Value) -> Value:
        return nd.matmul(y, self.a) + nd.square(nd.matmul(y, self.b))

    def soft_select_baseline(self, theta: np.ndarray) -> float:
        """Reward at the mean one-hot vector, i.e. at the probability vector itself."""
        p = _softmax(theta)
        return float(p @ self.a + (p @ self.b) ** 2)

    def exact_optimal_baseline(self, theta: np.ndarray) -> float:
        """Variance-minimizing constant ``E[f |s|^2] / E[|s|^2]`` with ``s`` the score; by enumeration."""
        p, f = _softmax(theta), self.outcome_rewards()
        score_sq = ((np.eye(len(p)) - p) ** 2).sum(axis=1)
        return float((p * f * score_sq).sum() / (p * score_sq).sum())

    def gumbel_objective(self, tau: float, hard: bool = False):
        def objective(rows: Value, rng: np.random.Generator) -> Value:
            g = gumbel_noise(rng.random(rows.shape))
            y = nd.softmax((nd.log_softmax(rows, axis=-1) + g) * (1.0 / tau), axis=-1)
            if hard:
                y = nd.straight_through(y, one_hot_argmax(y.data))
            return self.relaxed_reward(y)

        return objective


@dataclass
class GaussianToy:
    """``E_{z ~ N(mu, sigma^2)} -(z - target)^2`` with ``theta = (mu, log sigma)``."""

    name: str
    theta: np.ndarray
    target: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (2,):
            raise ValueError("theta is (mu, log_sigma)")

    def value(self, theta=None) -> float:
        mu, log_sigma = self.theta if theta is None else theta
        return float(-((mu - self.target) ** 2) - np.exp(2 * log_sigma))

    def exact_grad(self, theta=None) -> np.ndarray:
        mu, log_sigma = self.theta if theta is None else theta
        return np.array([-2.0 * (mu - self.target), -2.0 * np.exp(2 * log_sigma)])

    def sample(self, theta: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
        return theta[0] + np.exp(theta[1]) * rng.standard_normal(n)

    def logq(self, rows: Value, samples: np.ndarray) -> Value:
        mu, log_sigma = rows[:, 0], rows[:, 1]
        return -0.5 * nd.square((samples - mu) * nd.exp(-log_sigma)) - log_sigma - 0.5 * np.log(2 * np.pi)

    def reward(self, samples: np.ndarray) -> np.ndarray:
        return -((samples - self.target) ** 2)

    def soft_select_baseline(self, theta: np.ndarray) -> float:
        return float(-((theta[0] - self.target) ** 2))

    def reparam_objective(self):
        def objective(rows: Value, rng: np.random.Generator) -> Value:
            eps = rng.standard_normal(rows.shape[0])
            z = rows[:, 0] + nd.exp(rows[:, 1]) * eps
            return -nd.square(z - self.target)

        return objective


CAT3 = CategoricalToy("cat3", [0.4, -0.2, 0.1], [1.0, 2.0, 3.0], [0.5, -1.0, 1.5])
CAT5 = CategoricalToy("cat5", [0.3, -0.5, 0.0, 0.8, -0.1], [2.0, 1.0, 3.0, 2.5, 1.5], [1.0, -0.5, 0.8, -1.2, 0.3])
GAUSS = GaussianToy("gauss", [0.5, -0.3], 1.5)
SHIPPED_TOYS = {toy.name: toy for toy in (CAT3, CAT5, GAUSS)}


@dataclass
class LinearGaussianToy:
    """Conjugate model ``z ~ N(0, 1)``, ``x | z ~ N(w z + c, s^2)`` with one-dimensional ``z`` and ``x``."""

    w: float = 2.0
    c: float = 0.5
    s: float = 0.8

    def logcond(self, x, z) -> Value:
        """``log p(x | z)``; ``z`` may carry a leading sample axis over ``x``'s shape."""
        z = nd.as_value(z)
        x = np.broadcast_to(np.asarray(x, dtype=np.float64), z.shape)
        resid = (x - (self.w * z + self.c)) * (1.0 / self.s)
        per_dim = -0.5 * nd.square(resid) - np.log(self.s) - 0.5 * np.log(2 * np.pi)
        return nd.vsum(per_dim, axis=-1)

    def log_evidence(self, x) -> np.ndarray:
        """``log N(x; c, w^2 + s^2)``."""
        x = np.asarray(x, dtype=np.float64)
        var = self.w**2 + self.s**2
        return -0.5 * (x - self.c) ** 2 / var - 0.5 * np.log(2 * np.pi * var)

    def posterior(self, x) -> tuple[np.ndarray, float]:
        """Exact posterior mean (per ``x``) and standard deviation."""
        x = np.asarray(x, dtype=np.float64)
        precision = 1.0 + self.w**2 / self.s**2
        return (self.w / self.s**2) * (x - self.c) / precision, float(np.sqrt(1.0 / precision))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal(n)
        return self.w * z + self.c + self.s * rng.standard_normal(n)
