"""Random normalized potential tables for tests and equivalence suites."""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax

from .hmm import HmmPotentials
from .semimarkov import SegmentalPotentials, self_transition_mask


def random_hmm(rng: np.random.Generator, T: int, K: int, scale: float = 1.5) -> HmmPotentials:
    init = log_softmax(scale * rng.standard_normal(K))
    trans = log_softmax(scale * rng.standard_normal((T, K, K)), axis=1)
    emit = np.log(rng.uniform(0.05, 1.0, size=(T, K)))
    return HmmPotentials(init, trans, emit)


def random_segmental(
    rng: np.random.Generator, m: int, n_records: int, max_len: int, scale: float = 1.5
) -> SegmentalPotentials:
    """Normalized transitions with forbidden repeats; gen ``-inf`` past the end."""
    C = n_records + 1
    init = log_softmax(scale * rng.standard_normal(C))
    logits = scale * rng.standard_normal((m, C, C))
    logits[:, self_transition_mask(C)] = -np.inf
    trans = log_softmax(logits, axis=1)
    gen = np.log(rng.uniform(0.01, 1.0, size=(m, max_len, C))) * (1 + np.arange(max_len))[None, :, None]
    starts = np.arange(m)[:, None]
    ends = starts + np.arange(max_len)[None, :] + 1
    gen[ends > m] = -np.inf
    return SegmentalPotentials(gen, trans, init)
