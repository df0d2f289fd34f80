"""Generalized EM: gradient ascent on lattice log-marginals.

The gradient of ``log Z`` with respect to each table entry is that entry's
posterior usage probability.  ``mode="em"`` computes those posteriors with the
numpy forward-backward pass and chains them through ``pots_fn``;
``mode="autodiff"`` differentiates the forward recursion directly.  Both give
the same gradient, hence the same parameter trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import ndgrad as nd
from ..lattice import HmmPotentials, SegmentalPotentials, hmm_forward, hmm_marginals, semimarkov_forward, semimarkov_marginals
from ..ndgrad import Value

PotsFn = Callable[[Value, object], "HmmPotentials | SegmentalPotentials"]


class EmDivergence(FloatingPointError):
    """The training loss or gradient stopped being finite."""


@dataclass
class EmResult:
    theta: np.ndarray
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    trajectory: list[np.ndarray] = field(default_factory=list)


def _tables(pots) -> tuple[Value, Value, Value]:
    if isinstance(pots, HmmPotentials):
        return pots.init, pots.trans, pots.emit
    return pots.init_trans, pots.trans, pots.gen


def _marginals(pots):
    if isinstance(pots, HmmPotentials):
        return hmm_marginals(pots)
    if not pots.batched:
        return semimarkov_marginals(pots)
    parts = [semimarkov_marginals(pots.item(b)) for b in range(pots.gen.shape[0])]
    return tuple(np.stack([np.asarray(x) for x in column]) for column in zip(*parts))


def _log_z(pots) -> Value:
    if isinstance(pots, HmmPotentials):
        return hmm_forward(pots)
    return semimarkov_forward(pots)


def _expected_statistics(pots) -> tuple[float, Value]:
    """``(log Z, surrogate)`` where the surrogate's gradient equals that of ``log Z``.

    The surrogate is ``sum(posterior * table)`` over the three tables with the
    posteriors held constant; impossible (-inf) entries contribute nothing.
    """
    log_z, *posts = _marginals(pots)
    log_z = float(np.sum(log_z))
    total = Value(0.0)
    for table, post in zip(_tables(pots), posts):
        finite = np.isfinite(table.data)
        safe = nd.masked_fill(table, ~finite, 0.0)
        total = total + nd.vsum(safe * np.where(finite, post, 0.0))
    return log_z, total


def _loss_and_grad(
    theta: np.ndarray, pots_fn: PotsFn, data: Sequence, mode: str, batched: bool
) -> tuple[float, np.ndarray]:
    param = Value(theta.copy(), requires_grad=True)
    total_log_z, objective = 0.0, Value(0.0)
    for group in [data] if batched else data:
        pots = pots_fn(param, group)
        if mode == "em":
            log_z, surrogate = _expected_statistics(pots)
        elif mode == "autodiff":
            surrogate = nd.vsum(_log_z(pots))
            log_z = float(surrogate.data)
        else:
            raise ValueError(f"mode must be 'em' or 'autodiff', got {mode!r}")
        total_log_z += log_z
        objective = objective + surrogate
    nd.backward(objective * (-1.0 / len(data)))
    return -total_log_z / len(data), param.grad.copy()


def em_fit(
    pots_fn: PotsFn,
    theta0,
    data: Sequence,
    steps: int,
    lr: float,
    mode: str = "em",
    keep_trajectory: bool = False,
    batched: bool = False,
) -> EmResult:
    """Minimize the mean negative log-marginal over ``data`` by plain gradient descent.

    ``pots_fn(theta, item)`` must build the item's potentials from the
    parameter Value; with ``batched=True`` it is called once on the whole
    dataset and returns potentials with a leading batch axis.  Raises
    :class:`EmDivergence` when the loss or gradient becomes non-finite.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if len(data) == 0:
        raise ValueError("no training data")
    theta = np.array(theta0, dtype=np.float64)
    result = EmResult(theta)
    for step in range(steps):
        loss, grad = _loss_and_grad(theta, pots_fn, data, mode, batched)
        norm = float(np.sqrt(np.sum(grad * grad)))
        if not (np.isfinite(loss) and np.isfinite(norm)):
            raise EmDivergence(
                f"{mode} step {step}: loss={loss}, grad norm={norm}, "
                f"last finite loss={result.losses[-1] if result.losses else None}"
            )
        result.losses.append(loss)
        result.grad_norms.append(norm)
        if keep_trajectory:
            result.trajectory.append(theta.copy())
        theta = theta - lr * grad
    result.theta = theta
    return result


def negative_log_marginal(pots_fn: PotsFn, theta, data: Sequence, batched: bool = False) -> float:
    theta = Value(np.asarray(theta, dtype=np.float64))
    if batched:
        return -float(np.mean(_log_z(pots_fn(theta, data)).data))
    return -float(np.mean([float(_log_z(pots_fn(theta, item)).data) for item in data]))


# ----------------------------------------------------------------------
# a parameterized HMM for generate-then-fit experiments
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class HmmLayout:
    """Unconstrained parameter vector for a K-state, V-symbol HMM (softmax-normalized)."""

    n_states: int
    n_symbols: int

    @property
    def size(self) -> int:
        K, V = self.n_states, self.n_symbols
        return K + K * K + K * V

    def split(self, theta: Value) -> tuple[Value, Value, Value]:
        K, V = self.n_states, self.n_symbols
        init = nd.log_softmax(theta[:K])
        trans = nd.log_softmax(nd.reshape(theta[K : K + K * K], (K, K)), axis=0)  # [next, prev]
        emit = nd.log_softmax(nd.reshape(theta[K + K * K :], (K, V)), axis=-1)
        return init, trans, emit

    def pots(self, theta: Value, observations) -> HmmPotentials:
        obs = np.asarray(observations, dtype=int)
        init, trans, emit = self.split(theta)
        T = len(obs)
        return HmmPotentials(init, nd.broadcast_to(trans, (T,) + trans.shape), emit[:, obs].T)

    def batch_pots(self, theta: Value, sequences) -> HmmPotentials:
        """Potentials for equal-length sequences stacked on a leading batch axis."""
        obs = np.asarray(sequences, dtype=int)
        if obs.ndim != 2:
            raise ValueError("batch_pots needs equal-length sequences")
        B, T = obs.shape
        init, trans, emit = self.split(theta)
        K = self.n_states
        return HmmPotentials(
            nd.broadcast_to(init, (B, K)),
            nd.broadcast_to(trans, (B, T, K, K)),
            nd.transpose(emit[:, obs], (1, 2, 0)),
        )

    def pack(self, init: np.ndarray, trans: np.ndarray, emit: np.ndarray) -> np.ndarray:
        """Log-parameters of explicit probability tables (``trans[next, prev]``)."""
        return np.concatenate([np.log(init), np.log(trans).reshape(-1), np.log(emit).reshape(-1)])

    def sample(self, theta, rng: np.random.Generator, length: int) -> np.ndarray:
        init, trans, emit = (np.exp(t.data) for t in self.split(Value(np.asarray(theta, dtype=np.float64))))
        state = rng.choice(self.n_states, p=init)
        out = []
        for t in range(length):
            if t > 0:
                state = rng.choice(self.n_states, p=trans[:, state])
            out.append(rng.choice(self.n_symbols, p=emit[state]))
        return np.array(out)
