from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_softmax
from scipy.special import logsumexp as scipy_lse

from latentseq import ndgrad as nd
from latentseq.lattice import (
    HmmPotentials,
    SegmentalPotentials,
    SegmentationPath,
    brute_force_hmm,
    brute_force_segmental,
    count_segmentations,
    enumerate_alignments,
    enumerate_segmentations,
    equivalence_suite,
    hmm_forward,
    hmm_marginals,
    hmm_posteriors,
    random_hmm,
    random_segmental,
    self_transition_mask,
    semimarkov_expected_segments,
    semimarkov_forward,
    semimarkov_log_z_and_expected_segments,
    semimarkov_map,
    semimarkov_marginals,
)
from latentseq.ndgrad import Value, gradcheck


def naive_paths(m: int, n_records: int, max_len: int):
    """Every (cuts, labels) pair built by plain recursion, independent of the library enumerator."""
    out = []

    def grow(cuts, labels):
        pos = cuts[-1]
        if pos == m:
            out.append((tuple(cuts), tuple(labels)))
            return
        for size in range(1, max_len + 1):
            if pos + size > m:
                break
            for j in range(n_records + 1):
                if labels and labels[-1] == j and j != 0:
                    continue
                grow(cuts + [pos + size], labels + [j])

    grow([0], [])
    return out


def naive_path_score(pots: SegmentalPotentials, cuts, labels) -> float:
    gen, trans, init = pots.gen.data, pots.trans.data, pots.init_trans.data
    total = 0.0
    for k, (a, b, j) in enumerate(zip(cuts, cuts[1:], labels)):
        total += init[j] if k == 0 else trans[a, j, labels[k - 1]]
        total += gen[a, b - a - 1, j]
    return total


def naive_segmental(pots: SegmentalPotentials) -> dict:
    m, L, C = pots.gen.shape
    paths = naive_paths(m, C - 1, L)
    scores = np.array([naive_path_score(pots, c, lab) for c, lab in paths])
    log_z = scipy_lse(scores)
    w = np.exp(scores - log_z)
    return {
        "log_z": log_z,
        "expected_segments": float(w @ np.array([len(lab) for _, lab in paths])),
        "best": paths[int(np.argmax(scores))],
        "best_score": float(scores.max()),
    }


def naive_hmm(pots: HmmPotentials) -> tuple[float, np.ndarray]:
    init, trans, emit = pots.init.data, pots.trans.data, pots.emit.data
    T, K = emit.shape
    scores, paths = [], list(itertools.product(range(K), repeat=T))
    for path in paths:
        s = init[path[0]] + emit[0, path[0]]
        for t in range(1, T):
            s += trans[t, path[t], path[t - 1]] + emit[t, path[t]]
        scores.append(s)
    scores = np.array(scores)
    log_z = scipy_lse(scores)
    post = np.zeros((T, K))
    for path, s in zip(paths, scores):
        for t, k in enumerate(path):
            post[t, k] += np.exp(s - log_z)
    return log_z, post


class TestHmm:
    def test_single_state(self):
        rng = np.random.default_rng(42)
        emit = np.log(rng.uniform(0.1, 1, size=(5, 1)))
        pots = HmmPotentials(np.zeros(1), np.zeros((5, 1, 1)), emit)
        np.testing.assert_allclose(hmm_forward(pots).item(), emit.sum(), rtol=1e-14)
        np.testing.assert_allclose(hmm_posteriors(pots), np.ones((5, 1)), rtol=1e-14)

    def test_single_step(self):
        rng = np.random.default_rng(42)
        pots = random_hmm(rng, 1, 4)
        expected = scipy_lse(pots.init.data + pots.emit.data[0])
        np.testing.assert_allclose(hmm_forward(pots).item(), expected, rtol=1e-14)

    def test_random_against_naive_enumeration(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            pots = random_hmm(rng, int(rng.integers(1, 6)), int(rng.integers(1, 5)))
            log_z, post = naive_hmm(pots)
            assert abs(hmm_forward(pots).item() - log_z) <= 1e-9
            np.testing.assert_allclose(hmm_posteriors(pots), post, atol=1e-9)
            np.testing.assert_allclose(brute_force_hmm(pots)["log_z"], log_z, atol=1e-12)

    def test_posteriors_normalize_and_match_gradient(self):
        rng = np.random.default_rng(42)
        pots = random_hmm(rng, 6, 5)
        post = hmm_posteriors(pots)
        np.testing.assert_allclose(post.sum(1), 1.0, atol=1e-9)
        emit = Value(pots.emit.data, requires_grad=True)
        nd.backward(hmm_forward(HmmPotentials(pots.init.data, pots.trans.data, emit)))
        np.testing.assert_allclose(emit.grad, post, atol=1e-8)

    def test_transition_marginals_consistent(self):
        rng = np.random.default_rng(42)
        pots = random_hmm(rng, 5, 3)
        _, init_post, trans_post, emit_post = hmm_marginals(pots)
        np.testing.assert_allclose(init_post, emit_post[0], atol=1e-12)
        # summing pair marginals over the previous state recovers the unary marginal
        np.testing.assert_allclose(trans_post[1:].sum(-1), emit_post[1:], atol=1e-12)
        trans = Value(pots.trans.data, requires_grad=True)
        nd.backward(hmm_forward(HmmPotentials(pots.init.data, trans, pots.emit.data)))
        np.testing.assert_allclose(trans.grad, trans_post, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            HmmPotentials(np.zeros(2), np.zeros((3, 2, 2)), np.zeros((4, 2)))

    def test_validate(self):
        rng = np.random.default_rng(42)
        random_hmm(rng, 3, 3).validate()
        with pytest.raises(ValueError):
            HmmPotentials(np.zeros(2), np.zeros((1, 2, 2)), np.zeros((1, 2))).validate()

    def test_alignment_enumeration(self):
        assert enumerate_alignments(5, 1).shape == (1, 5)
        assert enumerate_alignments(2, 2).shape == (4, 2)
        with pytest.raises(ValueError):
            enumerate_alignments(30, 5)

    def test_gradcheck(self):
        rng = np.random.default_rng(42)
        pots = random_hmm(rng, 4, 3)

        def f(e):
            return hmm_forward(HmmPotentials(pots.init.data, pots.trans.data, e))

        assert gradcheck(f, pots.emit.data) <= 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 5), st.integers(2, 4))
    def test_state_relabeling_invariant(self, seed, T, K):
        rng = np.random.default_rng(seed)
        pots = random_hmm(rng, T, K)
        perm = rng.permutation(K)
        permuted = HmmPotentials(pots.init.data[perm], pots.trans.data[:, perm][:, :, perm], pots.emit.data[:, perm])
        np.testing.assert_allclose(hmm_forward(permuted).item(), hmm_forward(pots).item(), rtol=1e-12)


def forced_pots(gen, trans=None, init=None):
    gen = np.asarray(gen, dtype=np.float64)
    m, _, C = gen.shape
    if init is None:
        init = np.log(np.full(C, 1.0 / C))
    if trans is None:
        logits = np.zeros((m, C, C))
        logits[:, self_transition_mask(C)] = -np.inf
        trans = log_softmax(logits, axis=1)
    return SegmentalPotentials(gen, trans, init)


class TestSemiMarkov:
    def test_single_token(self):
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 1, 3, 2)
        expected = scipy_lse(pots.init_trans.data + pots.gen.data[0, 0])
        np.testing.assert_allclose(semimarkov_forward(pots).item(), expected, rtol=1e-14)

    def test_two_tokens_hand_expanded(self):
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 2, 1, 1)
        g, tr, init = pots.gen.data, pots.trans.data, pots.init_trans.data
        terms = [init[a] + g[0, 0, a] + tr[1, b, a] + g[1, 0, b] for a in (0, 1) for b in (0, 1)]
        # repeating record 1 is -inf, so three label pairs survive
        assert np.isneginf(terms[3])
        np.testing.assert_allclose(semimarkov_forward(pots).item(), scipy_lse(terms), rtol=1e-14)

    def test_random_against_naive_enumeration(self):
        rng = np.random.default_rng(42)
        for _ in range(80):
            m = int(rng.integers(1, 7))
            pots = random_segmental(rng, m, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
            oracle = naive_segmental(pots)
            log_z, expected = semimarkov_log_z_and_expected_segments(pots)
            assert abs(log_z.item() - oracle["log_z"]) <= 1e-9
            assert abs(expected.item() - oracle["expected_segments"]) <= 1e-8
            lib = brute_force_segmental(pots)
            np.testing.assert_allclose(lib["log_z"], oracle["log_z"], atol=1e-12)

    def test_numpy_forward_backward_agrees(self):
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 7, 3, 3)
        log_z, init_post, trans_post, gen_post = semimarkov_marginals(pots)
        np.testing.assert_allclose(log_z, semimarkov_forward(pots).item(), atol=1e-12)
        gen = Value(pots.gen.data, requires_grad=True)
        init = Value(pots.init_trans.data, requires_grad=True)
        trans = Value(pots.trans.data, requires_grad=True)
        nd.backward(semimarkov_forward(SegmentalPotentials(gen, trans, init)))
        np.testing.assert_allclose(gen.grad, gen_post, atol=1e-10)
        np.testing.assert_allclose(init.grad, init_post, atol=1e-10)
        np.testing.assert_allclose(trans.grad, trans_post, atol=1e-10)
        np.testing.assert_allclose(gen.grad, brute_force_segmental(pots)["gen_post"], atol=1e-8)

    def test_gen_gradient_finite_differences(self):
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 5, 2, 3)
        finite = np.isfinite(pots.gen.data)

        def f(g):
            return semimarkov_forward(SegmentalPotentials(nd.masked_fill(g, ~finite, -np.inf), pots.trans.data,
                                                          pots.init_trans.data))

        assert gradcheck(f, np.where(finite, pots.gen.data, 0.0)) <= 1e-6

    def test_expected_segments_gradcheck(self):
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 5, 2, 3)
        finite = np.isfinite(pots.gen.data)

        def f(g):
            gen = nd.masked_fill(g, ~finite, -np.inf)
            return semimarkov_expected_segments(SegmentalPotentials(gen, pots.trans.data, pots.init_trans.data))

        assert gradcheck(f, np.where(finite, pots.gen.data, 0.0)) <= 1e-6

    def test_expected_segments_equals_lengths_derivative(self):
        # E[tau] is d log Z / d s when every segment score is shifted by s
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 6, 2, 3)
        s = Value(np.array(0.0), requires_grad=True)
        shifted = pots.gen + nd.broadcast_to(s, pots.gen.shape)
        nd.backward(semimarkov_forward(SegmentalPotentials(shifted, pots.trans.data, pots.init_trans.data)))
        np.testing.assert_allclose(s.grad.item(), semimarkov_expected_segments(pots).item(), atol=1e-10)

    def test_forced_structure_count(self):
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 2, 2, 1)
        assert semimarkov_expected_segments(pots).item() == pytest.approx(2.0, abs=1e-12)

    def test_single_valid_segmentation(self):
        # null-only labels with unit lengths leave exactly one path of 4 segments
        pots = forced_pots(np.log(np.full((4, 1, 1), 0.3)))
        assert count_segmentations(4, 0, 1) == 1
        # the count is carried in log space, so "exact" means to within an ulp of the exp/log round trip
        assert semimarkov_expected_segments(pots).item() == pytest.approx(4.0, abs=4 * np.finfo(float).eps)
        path, score = semimarkov_map(pots)
        assert path.cuts == (0, 1, 2, 3, 4) and path.labels == (0, 0, 0, 0)
        np.testing.assert_allclose(score, semimarkov_forward(pots).item(), rtol=1e-14)

    def test_longer_segments_never_hurt(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            m = int(rng.integers(2, 7))
            full = random_segmental(rng, m, 2, 3)
            for L in (1, 2):
                short = SegmentalPotentials(full.gen.data[:, :L].copy(), full.trans.data, full.init_trans.data)
                assert semimarkov_forward(short).item() <= semimarkov_forward(full).item() + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 3), st.integers(1, 3))
    def test_record_relabeling_invariant(self, seed, m, K, L):
        rng = np.random.default_rng(seed)
        pots = random_segmental(rng, m, K, L)
        perm = np.concatenate([[0], 1 + rng.permutation(K)])
        permuted = SegmentalPotentials(
            pots.gen.data[:, :, perm], pots.trans.data[:, perm][:, :, perm], pots.init_trans.data[perm]
        )
        np.testing.assert_allclose(semimarkov_forward(permuted).item(), semimarkov_forward(pots).item(), rtol=1e-12)

    def test_batched_equals_per_item(self):
        rng = np.random.default_rng(42)
        items = [random_segmental(rng, 6, 2, 3) for _ in range(3)]
        lengths = np.array([6, 4, 1])
        gen = np.stack([p.gen.data for p in items])
        for b, n in enumerate(lengths):
            starts = np.arange(6)[:, None]
            gen[b][starts + np.arange(3)[None, :] + 1 > n] = -np.inf
        batch = SegmentalPotentials(gen, np.stack([p.trans.data for p in items]),
                                    np.stack([p.init_trans.data for p in items]), lengths)
        log_z, expected = semimarkov_log_z_and_expected_segments(batch)
        for b, n in enumerate(lengths):
            single = SegmentalPotentials(gen[b, :n].copy(), items[b].trans.data[:n], items[b].init_trans.data)
            z1, e1 = semimarkov_log_z_and_expected_segments(single)
            np.testing.assert_allclose(log_z.data[b], z1.item(), rtol=1e-13)
            np.testing.assert_allclose(expected.data[b], e1.item(), rtol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            SegmentalPotentials(np.zeros((0, 1, 2)), np.zeros((0, 2, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            SegmentalPotentials(np.zeros((3, 0, 2)), np.zeros((3, 2, 2)), np.zeros(2))

    def test_validate(self):
        rng = np.random.default_rng(42)
        random_segmental(rng, 4, 2, 2).validate()
        bad = random_segmental(rng, 4, 2, 2)
        bad.trans.data[1, 1, 1] = -1.0
        with pytest.raises(ValueError):
            bad.validate()


class TestMap:
    def test_matches_naive_argmax(self):
        rng = np.random.default_rng(42)
        for _ in range(40):
            pots = random_segmental(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
            oracle = naive_segmental(pots)
            path, score = semimarkov_map(pots)
            np.testing.assert_allclose(score, oracle["best_score"], atol=1e-12)
            np.testing.assert_allclose(path.score(pots), score, atol=1e-12)
            assert path.is_valid(pots.gen.shape[1])

    def test_beats_random_paths(self):
        rng = np.random.default_rng(42)
        pots = random_segmental(rng, 8, 3, 3)
        _, best = semimarkov_map(pots)
        paths = enumerate_segmentations(8, 3, 3)
        picks = rng.integers(0, len(paths), size=1000)
        assert all(paths[i].score(pots) <= best + 1e-12 for i in picks)


class TestEnumeration:
    @staticmethod
    def recurrence(m: int, K: int, L: int) -> int:
        # f[n][j]: segmentations of n tokens whose last label is j
        C = K + 1
        f = [[0] * C for _ in range(m + 1)]
        for n in range(1, m + 1):
            for size in range(1, min(L, n) + 1):
                for j in range(C):
                    if n == size:
                        f[n][j] += 1
                    else:
                        f[n][j] += sum(f[n - size][q] for q in range(C) if q != j or j == 0)
        return sum(f[m])

    def test_single_token_two_labels(self):
        paths = enumerate_segmentations(1, 1, 1)
        assert sorted(p.labels for p in paths) == [(0,), (1,)]

    @pytest.mark.parametrize("m,K,L", [(2, 1, 2), (3, 2, 2), (5, 3, 3), (8, 2, 3)])
    def test_counts_match_recurrence(self, m, K, L):
        n = self.recurrence(m, K, L)
        assert len(enumerate_segmentations(m, K, L)) == n
        assert count_segmentations(m, K, L) == n
        assert len(naive_paths(m, K, L)) == n

    def test_paths_are_valid_and_distinct(self):
        paths = enumerate_segmentations(6, 2, 3)
        assert all(p.is_valid(3) and p.length == 6 for p in paths)
        assert len({(p.cuts, p.labels) for p in paths}) == len(paths)

    def test_guard(self):
        with pytest.raises(ValueError):
            enumerate_segmentations(11, 1, 2)

    def test_path_validation(self):
        with pytest.raises(ValueError):
            SegmentationPath((0, 2, 2), (1, 0))
        assert not SegmentationPath((0, 1, 2), (1, 1)).is_valid(2)
        assert SegmentationPath((0, 1, 2), (0, 0)).is_valid(1)


class TestSuite:
    def test_small_suite_deviations(self):
        dev = equivalence_suite(42, n_segmental=100, n_hmm=100, gradients=True)
        assert dev["segmental_log_z"] <= 1e-9 and dev["hmm_log_z"] <= 1e-9
        assert dev["expected_segments"] <= 1e-8
        assert dev["segmental_gen_grad"] <= 1e-8 and dev["hmm_emit_grad"] <= 1e-8

    def test_deterministic(self):
        assert equivalence_suite(3, 20, 20) == equivalence_suite(3, 20, 20)
