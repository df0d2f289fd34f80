"""Semi-Markov segmentation lattice with a null record.

Positions are boundaries ``0..m`` between output tokens.  A segment that
starts at boundary ``p`` with length index ``l`` covers tokens
``p+1 .. p+l+1`` and is emitted by record ``j`` (``j = 0`` is the null
record).  Moving from record ``q`` to record ``j`` at boundary ``p`` is scored
by ``trans[p, j, q]``; the first segment uses ``init_trans[j]``.  Repeating
the same non-null record back to back is forbidden (``-inf``) while
null-to-null is allowed.

All tables may carry a leading batch axis with per-item ``lengths``; entries
of ``gen`` that would run past an item's length must be ``-inf``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as np_logsumexp

from .. import ndgrad as nd
from ..ndgrad import NEG_INF, Value


@dataclass
class SegmentationPath:
    """Cut points ``0 = b0 < ... < b_tau = m`` and one record label per segment."""

    cuts: tuple[int, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        self.cuts = tuple(int(c) for c in self.cuts)
        self.labels = tuple(int(c) for c in self.labels)
        if len(self.cuts) != len(self.labels) + 1 or self.cuts[0] != 0:
            raise ValueError("cuts must start at 0 and have one more entry than labels")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ValueError("cuts must be strictly increasing")

    @property
    def n_segments(self) -> int:
        return len(self.labels)

    @property
    def length(self) -> int:
        return self.cuts[-1]

    def segments(self) -> list[tuple[int, int, int]]:
        """``(start, end, label)`` triples with ``end`` exclusive."""
        return [(a, b, c) for a, b, c in zip(self.cuts, self.cuts[1:], self.labels)]

    def is_valid(self, max_len: int) -> bool:
        if any(b - a > max_len for a, b in zip(self.cuts, self.cuts[1:])):
            return False
        return all(not (a == b and a != 0) for a, b in zip(self.labels, self.labels[1:]))

    def score(self, pots: "SegmentalPotentials") -> float:
        gen, trans, init = pots.gen.data, pots.trans.data, pots.init_trans.data
        total = init[self.labels[0]]
        prev = None
        for start, end, label in self.segments():
            if prev is not None:
                total += trans[start, label, prev]
            total += gen[start, end - start - 1, label]
            prev = label
        return float(total)


@dataclass
class SegmentalPotentials:
    """``gen [.., m, L, K+1]``, ``trans [.., m, K+1, K+1]``, ``init_trans [.., K+1]``."""

    gen: Value
    trans: Value
    init_trans: Value
    lengths: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.gen = nd.as_value(self.gen)
        self.trans = nd.as_value(self.trans)
        self.init_trans = nd.as_value(self.init_trans)
        if self.gen.ndim not in (3, 4):
            raise ValueError(f"gen must be [m, L, K+1] or batched, got {self.gen.shape}")
        *lead, m, L, C = self.gen.shape
        if m < 1:
            raise ValueError("empty input: m must be >= 1")
        if L < 1:
            raise ValueError("maximum segment length L must be >= 1")
        if self.trans.shape != (*lead, m, C, C) or self.init_trans.shape != (*lead, C):
            raise ValueError(
                f"shape mismatch: gen {self.gen.shape}, trans {self.trans.shape}, init {self.init_trans.shape}"
            )
        if self.lengths is None:
            self.lengths = np.full(tuple(lead), m, dtype=int) if lead else np.asarray(m)
        self.lengths = np.asarray(self.lengths, dtype=int)
        if np.any(self.lengths < 1) or np.any(self.lengths > m):
            raise ValueError("lengths must lie in [1, m]")

    @property
    def batched(self) -> bool:
        return self.gen.ndim == 4

    @property
    def n_positions(self) -> int:
        return self.gen.shape[-3]

    @property
    def max_len(self) -> int:
        return self.gen.shape[-2]

    @property
    def n_labels(self) -> int:
        return self.gen.shape[-1]

    def item(self, b: int) -> "SegmentalPotentials":
        """Numpy copy of batch item ``b``, cropped to its length."""
        m = int(self.lengths[b])
        return SegmentalPotentials(
            self.gen.data[b, :m], self.trans.data[b, :m], self.init_trans.data[b]
        )

    def validate(self, atol: float = 1e-9) -> None:
        C = self.n_labels
        if not np.allclose(np.exp(self.init_trans.data).sum(-1), 1.0, atol=atol):
            raise ValueError("init_trans does not normalize")
        trans = self.trans.data[..., 1:, :, :]
        if not np.allclose(np.exp(trans).sum(-2), 1.0, atol=atol):
            raise ValueError("trans does not normalize over the next record")
        diag = np.diagonal(trans, axis1=-2, axis2=-1)[..., 1:]
        if C > 1 and not np.all(diag == NEG_INF):
            raise ValueError("repeating a non-null record must score -inf")
        if np.any(self.gen.data > 0):
            raise ValueError("gen entries must be log-probabilities")


def self_transition_mask(n_labels: int) -> np.ndarray:
    """Boolean ``[K+1, K+1]`` mask of forbidden ``q -> j`` moves (``j == q != 0``)."""
    mask = np.eye(n_labels, dtype=bool)
    mask[0, 0] = False
    return mask


def _as_batch(pots: SegmentalPotentials):
    if pots.batched:
        return pots.gen, pots.trans, pots.init_trans, pots.lengths
    gen = nd.reshape(pots.gen, (1, *pots.gen.shape))
    trans = nd.reshape(pots.trans, (1, *pots.trans.shape))
    init = nd.reshape(pots.init_trans, (1, *pots.init_trans.shape))
    return gen, trans, init, np.atleast_1d(pots.lengths)


def _logaddexp(a: Value, b: Value) -> Value:
    return nd.logsumexp(nd.stack([a, b]), axis=0)


def _forward(pots: SegmentalPotentials, with_counts: bool):
    """Shared forward sweep; optionally carries the expected-count accumulator.

    ``msg[p][b, j]`` collects everything that can precede a segment starting at
    boundary ``p`` with record ``j``; the count accumulator does the same for
    path weight times number of segments so far (expectation semiring in
    log space).
    """
    gen, trans, init, lengths = _as_batch(pots)
    B, m, L, C = gen.shape
    msgs: list[Value] = [init]
    count_msgs: list[Value] = [init]
    alphas: list[Value] = []
    counts: list[Value] = []
    for i in range(m):
        lo = max(0, i + 1 - L)
        starts = np.arange(lo, i + 1)
        seg = gen[:, starts, i - starts, :]  # [B, W, C]
        alpha = nd.logsumexp(nd.stack(msgs[lo : i + 1], axis=1) + seg, axis=1)
        alphas.append(alpha)
        if with_counts:
            weighted = nd.stack(count_msgs[lo : i + 1], axis=1) + seg
            counts.append(nd.logsumexp(weighted, axis=1))
        if i + 1 < m:
            step = trans[:, i + 1]  # [B, j, q]
            prev = nd.broadcast_to(nd.reshape(alpha, (B, 1, C)), (B, C, C))
            msgs.append(nd.logsumexp(step + prev, axis=-1))
            if with_counts:
                carried = _logaddexp(counts[-1], alpha)
                carried = nd.broadcast_to(nd.reshape(carried, (B, 1, C)), (B, C, C))
                count_msgs.append(nd.logsumexp(step + carried, axis=-1))
    rows = np.arange(B)
    final = nd.stack(alphas, axis=1)[rows, lengths - 1]
    log_z = nd.logsumexp(final, axis=-1)
    if not with_counts:
        return log_z, None
    final_counts = nd.logsumexp(nd.stack(counts, axis=1)[rows, lengths - 1], axis=-1)
    return log_z, final_counts


def semimarkov_forward(pots: SegmentalPotentials) -> Value:
    """Log marginal over all valid segmentations (shape ``[]`` or ``[B]``)."""
    log_z, _ = _forward(pots, with_counts=False)
    return log_z if pots.batched else nd.reshape(log_z, ())


def semimarkov_log_z_and_expected_segments(pots: SegmentalPotentials) -> tuple[Value, Value]:
    log_z, log_counts = _forward(pots, with_counts=True)
    expected = nd.exp(log_counts - log_z)
    if pots.batched:
        return log_z, expected
    return nd.reshape(log_z, ()), nd.reshape(expected, ())


def semimarkov_expected_segments(pots: SegmentalPotentials) -> Value:
    """Posterior expectation of the number of segments; differentiable."""
    return semimarkov_log_z_and_expected_segments(pots)[1]


def _tables(pots: SegmentalPotentials):
    if pots.batched:
        raise ValueError("pass a single instance (see SegmentalPotentials.item)")
    return pots.gen.data, pots.trans.data, pots.init_trans.data


def semimarkov_map(pots: SegmentalPotentials) -> tuple[SegmentationPath, float]:
    """Best segmentation under max-product, and its score."""
    gen, trans, init = _tables(pots)
    m, L, C = gen.shape
    best = np.full((m + 1, C), NEG_INF)
    back: dict[tuple[int, int], tuple[int, int]] = {}
    for i in range(m):
        for p in range(max(0, i + 1 - L), i + 1):
            if p == 0:
                cand = init + gen[0, i]
                prev = np.full(C, -1)
            else:
                scores = trans[p] + best[p][None, :]
                prev = np.argmax(scores, axis=1)
                cand = scores[np.arange(C), prev] + gen[p, i - p]
            better = cand > best[i + 1]
            for j in np.flatnonzero(better):
                back[(i + 1, int(j))] = (p, int(prev[j]))
            best[i + 1] = np.where(better, cand, best[i + 1])
    j = int(np.argmax(best[m]))
    score = float(best[m, j])
    if not np.isfinite(score):
        raise ValueError("no valid segmentation has finite score")
    cuts, labels = [m], []
    pos = m
    while pos > 0:
        p, q = back[(pos, j)]
        labels.append(j)
        cuts.append(p)
        pos, j = p, q
    return SegmentationPath(tuple(reversed(cuts)), tuple(reversed(labels))), score


def semimarkov_marginals(pots: SegmentalPotentials):
    """Forward-backward posteriors computed in numpy, independently of autodiff.

    Returns ``(log_z, init_post, trans_post, gen_post)`` where ``gen_post[p, l, j]``
    is the posterior probability that a segment starting at ``p`` with length
    index ``l`` is emitted by record ``j`` and ``trans_post[p, j, q]`` that of
    switching from ``q`` to ``j`` at boundary ``p``.
    """
    gen, trans, init = _tables(pots)
    m, L, C = gen.shape
    alpha = np.full((m + 1, C), NEG_INF)
    msg = np.full((m, C), NEG_INF)  # into a segment starting at p
    msg[0] = init
    for i in range(m):
        lo = max(0, i + 1 - L)
        ps = np.arange(lo, i + 1)
        alpha[i + 1] = np_logsumexp(msg[ps] + gen[ps, i - ps], axis=0)
        if i + 1 < m:
            msg[i + 1] = np_logsumexp(trans[i + 1] + alpha[i + 1][None, :], axis=1)
    log_z = np_logsumexp(alpha[m])

    beta = np.full((m + 1, C), NEG_INF)  # completions after a segment with record q ends at p
    beta[m] = 0.0
    # out[p, j]: completions from a segment with record j starting at p
    out = np.full((m, C), NEG_INF)
    for p in range(m - 1, -1, -1):
        ls = np.arange(min(L, m - p))
        out[p] = np_logsumexp(gen[p, ls] + beta[p + ls + 1], axis=0)
        if p > 0:
            beta[p] = np_logsumexp(trans[p] + out[p][:, None], axis=0)

    gen_post = np.zeros_like(gen)
    for p in range(m):
        ls = np.arange(min(L, m - p))
        gen_post[p, ls] = np.exp(msg[p][None, :] + gen[p, ls] + beta[p + ls + 1] - log_z)
    trans_post = np.zeros_like(trans)
    for p in range(1, m):
        trans_post[p] = np.exp(alpha[p][None, :] + trans[p] + out[p][:, None] - log_z)
    init_post = np.exp(init + out[0] - log_z)
    return float(log_z), init_post, trans_post, gen_post
