"""Randomized equivalence checks of the dynamic programs against enumeration."""

from __future__ import annotations

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import Value
from .enumerate import brute_force_hmm, brute_force_segmental
from .hmm import HmmPotentials, hmm_forward
from .random import random_hmm, random_segmental
from .semimarkov import SegmentalPotentials, semimarkov_log_z_and_expected_segments


def _segmental_deviation(pots: SegmentalPotentials, gradients: bool) -> dict[str, float]:
    oracle = brute_force_segmental(pots)
    gen = Value(pots.gen.data, requires_grad=gradients)
    log_z, expected = semimarkov_log_z_and_expected_segments(SegmentalPotentials(gen, pots.trans.data, pots.init_trans.data))
    out = {
        "segmental_log_z": abs(float(log_z.data) - oracle["log_z"]),
        "expected_segments": abs(float(expected.data) - oracle["expected_segments"]),
    }
    if gradients:
        nd.backward(log_z)
        finite = np.isfinite(pots.gen.data)
        out["segmental_gen_grad"] = float(np.max(np.abs(gen.grad - oracle["gen_post"])[finite]))
    return out


def _hmm_deviation(pots: HmmPotentials, gradients: bool) -> dict[str, float]:
    oracle = brute_force_hmm(pots)
    emit = Value(pots.emit.data, requires_grad=gradients)
    log_z = hmm_forward(HmmPotentials(pots.init.data, pots.trans.data, emit))
    out = {"hmm_log_z": abs(float(log_z.data) - oracle["log_z"])}
    if gradients:
        nd.backward(log_z)
        out["hmm_emit_grad"] = float(np.max(np.abs(emit.grad - oracle["posteriors"])))
    return out


def equivalence_suite(
    seed: int,
    n_segmental: int = 1000,
    n_hmm: int = 1000,
    max_m: int = 8,
    max_records: int = 3,
    max_len: int = 3,
    max_t: int = 6,
    max_states: int = 5,
    gradients: bool = False,
) -> dict[str, float]:
    """Maximum absolute deviation of each DP quantity from brute-force enumeration.

    Instance sizes are drawn uniformly up to the given caps.  With
    ``gradients`` the autodiff gradient of log Z with respect to the
    generation/emission tables is compared with enumerated posteriors.
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def record(devs: dict[str, float]) -> None:
        for k, v in devs.items():
            worst[k] = max(worst.get(k, 0.0), v)

    for _ in range(n_segmental):
        m = int(rng.integers(1, max_m + 1))
        pots = random_segmental(rng, m, int(rng.integers(1, max_records + 1)), int(rng.integers(1, max_len + 1)))
        record(_segmental_deviation(pots, gradients))
    for _ in range(n_hmm):
        pots = random_hmm(rng, int(rng.integers(1, max_t + 1)), int(rng.integers(1, max_states + 1)))
        record(_hmm_deviation(pots, gradients))
    return worst
