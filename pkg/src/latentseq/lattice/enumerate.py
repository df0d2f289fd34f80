"""Exhaustive path enumeration, used as a brute-force oracle for the lattices."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import logsumexp as np_logsumexp

from .hmm import HmmPotentials
from .semimarkov import SegmentalPotentials, SegmentationPath

MAX_SEGMENT_POSITIONS = 10
MAX_ALIGNMENT_PATHS = 10**6


def count_segmentations(m: int, n_records: int, max_len: int) -> int:
    """Number of valid segmentations, by a direct recurrence over end positions."""
    C = n_records + 1
    ending = np.zeros((m + 1, C), dtype=object)
    for end in range(1, m + 1):
        for start in range(max(0, end - max_len), end):
            for j in range(C):
                if start == 0:
                    ending[end, j] += 1
                else:
                    ending[end, j] += sum(ending[start, q] for q in range(C) if not (q == j and j != 0))
    return int(sum(ending[m]))


def _compositions(m: int, max_len: int):
    if m == 0:
        yield ()
        return
    for first in range(1, min(max_len, m) + 1):
        for rest in _compositions(m - first, max_len):
            yield (first,) + rest


def enumerate_segmentations(m: int, n_records: int, max_len: int) -> list[SegmentationPath]:
    """Every segmentation of ``m`` tokens with ``n_records`` non-null records."""
    if m > MAX_SEGMENT_POSITIONS:
        raise ValueError(f"refusing to enumerate m={m} > {MAX_SEGMENT_POSITIONS}")
    if m < 1 or max_len < 1 or n_records < 0:
        raise ValueError("need m >= 1, max_len >= 1, n_records >= 0")
    starts, sizes, labels, _, used = _segmentation_index(m, n_records, max_len)
    paths = []
    for row_starts, row_sizes, row_labels, row_used in zip(starts, sizes, labels, used):
        n = int(row_used.sum())
        cuts = tuple(row_starts[:n]) + (int(row_starts[n - 1] + row_sizes[n - 1] + 1),)
        paths.append(SegmentationPath(cuts, tuple(row_labels[:n])))
    return paths


@lru_cache(maxsize=64)
def _label_table(n: int, C: int) -> np.ndarray:
    """All label sequences of length ``n`` without repeated non-null neighbours."""
    table = np.arange(C)[:, None]
    for _ in range(n - 1):
        rows = np.repeat(table, C, axis=0)
        nxt = np.tile(np.arange(C), len(table))
        keep = (nxt != rows[:, -1]) | (nxt == 0)
        table = np.concatenate([rows[keep], nxt[keep, None]], axis=1)
    return table


@lru_cache(maxsize=256)
def _segmentation_index(m: int, n_records: int, max_len: int):
    if m > MAX_SEGMENT_POSITIONS:
        raise ValueError(f"refusing to enumerate m={m} > {MAX_SEGMENT_POSITIONS}")
    C = n_records + 1
    blocks = []
    for sizes in _compositions(m, max_len):
        n = len(sizes)
        labels = _label_table(n, C)
        N = len(labels)
        starts = np.broadcast_to(np.concatenate([[0], np.cumsum(sizes)[:-1]]), (N, n))
        lens = np.broadcast_to(np.asarray(sizes) - 1, (N, n))
        prev = np.concatenate([np.zeros((N, 1), dtype=int), labels[:, :-1]], axis=1)
        blocks.append((starts, lens, labels, prev))
    width = max(b[0].shape[1] for b in blocks)

    def pad(arrays):
        return np.concatenate([np.pad(a, ((0, 0), (0, width - a.shape[1]))) for a in arrays])

    starts, sizes, labels, prev = (pad([b[k] for b in blocks]) for k in range(4))
    used = pad([np.ones(b[0].shape, dtype=bool) for b in blocks])
    arrays = (starts, sizes, labels, prev, used)
    for a in arrays:
        a.setflags(write=False)
    return arrays


def segmentation_scores(pots: SegmentalPotentials) -> np.ndarray:
    """Log score of every enumerated path, in :func:`enumerate_segmentations` order."""
    gen, trans, init = pots.gen.data, pots.trans.data, pots.init_trans.data
    m, L, C = gen.shape
    starts, sizes, labels, prev, used = _segmentation_index(m, C - 1, L)
    seg = np.where(used, gen[starts, sizes, labels], 0.0)
    tr = trans[starts, labels, prev]
    tr[:, 0] = init[labels[:, 0]]
    tr = np.where(used, tr, 0.0)
    return seg.sum(1) + tr.sum(1)


def brute_force_segmental(pots: SegmentalPotentials) -> dict:
    """Log marginal, expected segment count, MAP score and segment posteriors by enumeration."""
    gen = pots.gen.data
    m, L, C = gen.shape
    scores = segmentation_scores(pots)
    log_z = np_logsumexp(scores)
    weights = np.exp(scores - log_z)
    starts, sizes, labels, prev, used = _segmentation_index(m, C - 1, L)
    n_segments = used.sum(1)
    gen_post = np.zeros_like(gen)
    np.add.at(gen_post, (starts[used], sizes[used], labels[used]), np.repeat(weights, n_segments))
    return {
        "log_z": float(log_z),
        "expected_segments": float(weights @ n_segments),
        "map_score": float(scores.max()),
        "map_index": int(np.argmax(scores)),
        "gen_post": gen_post,
    }


@lru_cache(maxsize=64)
def _alignment_paths(T: int, K: int) -> np.ndarray:
    paths = np.indices((K,) * T).reshape(T, -1).T.copy()
    paths.setflags(write=False)
    return paths


def enumerate_alignments(T: int, K: int) -> np.ndarray:
    """All ``K**T`` state sequences as an integer array ``[K**T, T]``."""
    if T < 1 or K < 1:
        raise ValueError("need T >= 1 and K >= 1")
    if K**T > MAX_ALIGNMENT_PATHS:
        raise ValueError(f"refusing to enumerate {K}**{T} alignment paths")
    return _alignment_paths(T, K)


def alignment_scores(pots: HmmPotentials) -> np.ndarray:
    init, trans, emit = pots.init.data, pots.trans.data, pots.emit.data
    T, K = emit.shape
    paths = enumerate_alignments(T, K)
    steps = np.arange(T)
    total = init[paths[:, 0]] + emit[steps, paths].sum(1)
    if T > 1:
        total = total + trans[steps[1:], paths[:, 1:], paths[:, :-1]].sum(1)
    return total


def brute_force_hmm(pots: HmmPotentials) -> dict:
    T, K = pots.emit.shape
    scores = alignment_scores(pots)
    log_z = np_logsumexp(scores)
    weights = np.exp(scores - log_z)
    paths = enumerate_alignments(T, K)
    post = np.zeros((T, K))
    for t in range(T):
        post[t] = np.bincount(paths[:, t], weights=weights, minlength=K)
    return {"log_z": float(log_z), "posteriors": post}
