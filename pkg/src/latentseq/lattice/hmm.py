"""First-order alignment lattice (HMM) in log space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp as np_logsumexp

from .. import ndgrad as nd
from ..ndgrad import Value


@dataclass
class HmmPotentials:
    """Log-probability tables for an alignment chain.

    ``init[i]`` scores the first state, ``trans[t, i, j]`` scores moving to
    state ``i`` at step ``t`` from state ``j`` (normalized over ``i``;
    ``trans[0]`` is never read), and ``emit[t, i]`` scores observation ``t``
    under state ``i``.  A leading batch axis is allowed on all three.
    """

    init: Value
    trans: Value
    emit: Value

    def __post_init__(self):
        self.init = nd.as_value(self.init)
        self.trans = nd.as_value(self.trans)
        self.emit = nd.as_value(self.emit)
        *lead, T, K = self.emit.shape
        if T < 1 or K < 1:
            raise ValueError("need T >= 1 and K >= 1")
        if self.init.shape != (*lead, K) or self.trans.shape != (*lead, T, K, K):
            raise ValueError(
                f"shape mismatch: init {self.init.shape}, trans {self.trans.shape}, emit {self.emit.shape}"
            )

    @property
    def batched(self) -> bool:
        return self.emit.ndim == 3

    @property
    def n_steps(self) -> int:
        return self.emit.shape[-2]

    @property
    def n_states(self) -> int:
        return self.emit.shape[-1]

    def validate(self, atol: float = 1e-9) -> None:
        if not np.allclose(np.exp(self.init.data).sum(-1), 1.0, atol=atol):
            raise ValueError("init does not normalize")
        if not np.allclose(np.exp(self.trans.data).sum(-2), 1.0, atol=atol):
            raise ValueError("trans columns do not normalize over the next state")
        if np.any(self.emit.data > 0):
            raise ValueError("emit entries must be log-probabilities")


def hmm_forward(pots: HmmPotentials) -> Value:
    """Log marginal likelihood summed over all state sequences."""
    emit, trans = pots.emit, pots.trans
    K = pots.n_states
    lead = emit.shape[:-2]
    beta = emit[..., 0, :] + pots.init
    for t in range(1, pots.n_steps):
        prev = nd.broadcast_to(nd.reshape(beta, (*lead, 1, K)), (*lead, K, K))
        beta = emit[..., t, :] + nd.logsumexp(trans[..., t, :, :] + prev, axis=-1)
    return nd.logsumexp(beta, axis=-1)


def _forward_backward(init, trans, emit):
    """Forward/backward log-messages over ``[..., T, K]`` tables."""
    T = emit.shape[-2]
    fwd = np.empty(emit.shape)
    bwd = np.zeros(emit.shape)
    fwd[..., 0, :] = init + emit[..., 0, :]
    for t in range(1, T):
        fwd[..., t, :] = emit[..., t, :] + np_logsumexp(trans[..., t, :, :] + fwd[..., t - 1, None, :], axis=-1)
    for t in range(T - 2, -1, -1):
        ahead = emit[..., t + 1, :] + bwd[..., t + 1, :]
        bwd[..., t, :] = np_logsumexp(trans[..., t + 1, :, :] + ahead[..., :, None], axis=-2)
    return fwd, bwd, np_logsumexp(fwd[..., -1, :], axis=-1)


def hmm_marginals(pots: HmmPotentials) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Forward-backward posteriors, computed independently of the autodiff graph.

    Returns ``(log_z, init_post, trans_post, emit_post)`` where ``trans_post[t, i, j]``
    is the posterior of the move ``j -> i`` into step ``t`` (zero at ``t = 0``)
    and ``emit_post[t, i]`` that of state ``i`` at step ``t``.  Batched
    potentials give batched results.
    """
    init, trans, emit = pots.init.data, pots.trans.data, pots.emit.data
    fwd, bwd, log_z = _forward_backward(init, trans, emit)
    z = np.asarray(log_z)[..., None, None]
    emit_post = np.exp(fwd + bwd - z)
    trans_post = np.zeros_like(trans)
    ahead = (emit + bwd)[..., 1:, :, None]
    behind = fwd[..., :-1, None, :]
    trans_post[..., 1:, :, :] = np.exp(behind + trans[..., 1:, :, :] + ahead - z[..., None])
    return np.asarray(log_z), emit_post[..., 0, :].copy(), trans_post, emit_post


def hmm_posteriors(pots: HmmPotentials) -> np.ndarray:
    """Posterior state marginals ``p(a_t = i | y)`` with shape ``[T, K]``."""
    return hmm_marginals(pots)[3]
