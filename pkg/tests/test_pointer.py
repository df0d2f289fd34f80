from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentseq import ndgrad as nd
from latentseq.ndgrad import Params, Value, gradcheck
from latentseq.pointer import (
    CNNDM_TOPK,
    GIGAWORD_TOPK,
    XSUM_TOPK,
    EmbeddingTable,
    PointerState,
    RelationNet,
    UndefinedPosteriorError,
    contextual_scores,
    copy_mass,
    embedding_scores,
    mask_token,
    orthonormal_table,
    output_distribution,
    pointer_mixture,
    posterior_alignment,
    relation_edit,
    topk_point_marginal,
    topk_positions,
)


def random_state(rng: np.random.Generator, n: int, V: int, edit: bool = False) -> PointerState:
    att = rng.dirichlet(np.ones(n))
    p_vocab = rng.dirichlet(np.ones(V))
    src = rng.integers(0, V, size=n)
    delta = rng.dirichlet(np.ones(V), size=n) if edit else None
    return PointerState(np.float64(rng.uniform(0.05, 0.95)), att, p_vocab, src, delta)


class TestPointerMixture:
    def test_pure_generation(self):
        rng = np.random.default_rng(42)
        s = random_state(rng, 4, 6)
        s = PointerState(np.float64(1.0), s.attention, s.p_vocab, s.source_ids)
        for y in range(6):
            np.testing.assert_allclose(pointer_mixture(s, y).item(), s.p_vocab.data[y], rtol=1e-15)

    def test_pure_copy_single_position(self):
        s = PointerState(np.float64(0.0), np.array([0.2, 0.5, 0.3]), np.full(5, 0.2), np.array([1, 3, 4]))
        assert pointer_mixture(s, 3).item() == 0.5

    def test_duplicate_source_tokens(self):
        rng = np.random.default_rng(42)
        src = np.array([2, 5, 2, 2, 1])
        att = rng.dirichlet(np.ones(5))
        p_vocab = rng.dirichlet(np.ones(7))
        s = PointerState(np.float64(0.3), att, p_vocab, src)
        # explicit enumeration over positions
        copy = sum(att[i] for i in range(5) if src[i] == 2)
        np.testing.assert_allclose(pointer_mixture(s, 2).item(), 0.3 * p_vocab[2] + 0.7 * copy, rtol=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 8), st.integers(2, 10), st.booleans())
    def test_full_support_normalizes(self, seed, n, V, edit):
        s = random_state(np.random.default_rng(seed), n, V, edit)
        total = sum(pointer_mixture(s, y).item() for y in range(V))
        assert abs(total - 1.0) <= 1e-8
        np.testing.assert_allclose(output_distribution(s).data.sum(), 1.0, atol=1e-8)

    def test_output_distribution_matches_pointwise(self):
        rng = np.random.default_rng(42)
        for edit in (False, True):
            s = random_state(rng, 5, 8, edit)
            dist = output_distribution(s).data
            np.testing.assert_allclose(dist, [pointer_mixture(s, y).item() for y in range(8)], rtol=1e-13)

    def test_batched(self):
        rng = np.random.default_rng(42)
        B, n, V = 3, 4, 6
        att = rng.dirichlet(np.ones(n), size=B)
        p_vocab = rng.dirichlet(np.ones(V), size=B)
        src = rng.integers(0, V, size=(B, n))
        p_gen = rng.uniform(size=B)
        batched = PointerState(p_gen, att, p_vocab, src)
        ys = np.array([0, 3, 5])
        out = pointer_mixture(batched, ys).data
        for b in range(B):
            single = PointerState(np.float64(p_gen[b]), att[b], p_vocab[b], src[b])
            np.testing.assert_allclose(out[b], pointer_mixture(single, ys[b]).item(), rtol=1e-14)
            np.testing.assert_allclose(output_distribution(batched).data[b], output_distribution(single).data, rtol=1e-14)

    def test_gradcheck(self):
        rng = np.random.default_rng(42)
        src = np.array([1, 3, 1])

        def f(x):
            att = nd.softmax(x[:3])
            p_vocab = nd.softmax(x[3:8])
            p_gen = nd.sigmoid(x[8])
            return nd.log(pointer_mixture(PointerState(p_gen, att, p_vocab, src), 1))

        assert gradcheck(f, rng.normal(size=9)) <= 1e-6

    def test_validate(self):
        rng = np.random.default_rng(42)
        random_state(rng, 3, 4).validate()
        with pytest.raises(ValueError):
            PointerState(np.float64(0.5), np.array([0.5, 0.6]), np.full(3, 1 / 3), np.array([0, 1])).validate()
        with pytest.raises(ValueError):
            PointerState(np.float64(1.5), np.array([0.5, 0.5]), np.full(3, 1 / 3), np.array([0, 1])).validate()


class TestRelationEdit:
    def setup_method(self):
        self.rng = np.random.default_rng(42)
        self.emb = orthonormal_table(6, 8, self.rng)

    def zero_net(self, features):
        return Value(np.zeros(features.shape[:-1] + (8,)))

    def test_sums_to_one(self):
        params = Params()
        net = RelationNet(params, "rel", 6, 8, self.rng)
        dist = relation_edit(self.rng.normal(size=3), self.rng.normal(size=3), self.emb.embed(2), self.emb, net)
        np.testing.assert_allclose(dist.data.sum(), 1.0, atol=1e-9)

    def test_identity_edit(self):
        for w in range(6):
            dist = relation_edit(np.zeros(3), np.zeros(3), self.emb.embed(w), self.emb, self.zero_net)
            assert int(np.argmax(dist.data)) == w

    def test_perturbation_moves_argmax(self):
        table = self.emb.matrix.data
        for w, w2 in [(0, 3), (2, 5), (4, 1)]:
            shift = table[w2] - table[w]

            def net(features, shift=shift):
                return Value(shift)

            dist = relation_edit(np.zeros(3), np.zeros(3), self.emb.embed(w), self.emb, net)
            # direct computation: logits are the embedding of w2 against the table
            expected = np.exp(table @ table[w2])
            np.testing.assert_allclose(dist.data, expected / expected.sum(), rtol=1e-12)
            assert int(np.argmax(dist.data)) == w2

    def test_stacked_positions(self):
        params = Params()
        net = RelationNet(params, "rel", 6, 8, self.rng)
        enc = self.rng.normal(size=(4, 3))
        dec = self.rng.normal(size=3)
        ids = np.array([0, 2, 2, 5])
        stacked = relation_edit(dec, enc, self.emb.embed(ids), self.emb, net).data
        for i in range(4):
            row = relation_edit(dec, enc[i], self.emb.embed(ids[i]), self.emb, net).data
            np.testing.assert_allclose(stacked[i], row, rtol=1e-13)

    def test_tied_table(self):
        emb = EmbeddingTable(self.rng.normal(size=(5, 4)))
        v = self.rng.normal(size=4)
        np.testing.assert_allclose(emb.output_logits(v).data, emb.matrix.data @ v)
        np.testing.assert_array_equal(emb.embed([1, 3]).data, emb.matrix.data[[1, 3]])

    def test_orthonormal_guard(self):
        with pytest.raises(ValueError):
            orthonormal_table(9, 8, self.rng)


class TestTopK:
    def test_full_k_is_exact(self):
        rng = np.random.default_rng(42)
        s = random_state(rng, 6, 9, edit=True)
        scores = rng.normal(size=6)
        for y in range(9):
            np.testing.assert_allclose(
                topk_point_marginal(s, scores, 6, y).item(), copy_mass(s, y).item(), rtol=1e-14
            )

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 10), st.booleans())
    def test_monotone_in_k(self, seed, n, edit):
        rng = np.random.default_rng(seed)
        s = random_state(rng, n, 7, edit)
        scores = rng.normal(size=n)
        y = int(s.source_ids[0])
        values = [topk_point_marginal(s, scores, k, y).item() for k in range(1, n + 1)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        np.testing.assert_allclose(values[-1], copy_mass(s, y).item(), rtol=1e-13)

    def test_out_of_range(self):
        s = random_state(np.random.default_rng(42), 3, 4, edit=True)
        with pytest.raises(ValueError):
            topk_point_marginal(s, np.zeros(3), 0, 1)
        with pytest.raises(ValueError):
            topk_point_marginal(s, np.zeros(3), 4, 1)

    def test_selection_and_ties(self):
        np.testing.assert_array_equal(topk_positions([0.1, 0.9, 0.9, 0.2], 3), [1, 2, 3])

    def test_scores(self):
        rng = np.random.default_rng(42)
        enc, target = rng.normal(size=(5, 3)), rng.normal(size=3)
        np.testing.assert_allclose(contextual_scores(enc, target), enc @ target)
        emb = EmbeddingTable(rng.normal(size=(6, 3)))
        np.testing.assert_allclose(embedding_scores(emb, [0, 4], 2), emb.matrix.data[[0, 4]] @ emb.matrix.data[2])

    def test_reference_k_values(self):
        assert (GIGAWORD_TOPK, XSUM_TOPK, CNNDM_TOPK) == (6, 10, 14)


class TestPosteriorAlignment:
    def test_no_generation(self):
        s = PointerState(np.float64(0.0), np.array([0.2, 0.3, 0.5]), np.full(4, 0.25), np.array([1, 2, 1]))
        post = posterior_alignment(s, 1)
        assert post.generation == 0.0
        np.testing.assert_allclose(post.positions, [0.2 / 0.7, 0.0, 0.5 / 0.7], rtol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 8), st.booleans())
    def test_mass_and_bayes_consistency(self, seed, n, edit):
        rng = np.random.default_rng(seed)
        s = random_state(rng, n, 6, edit)
        y = int(s.source_ids[-1])
        post = posterior_alignment(s, y)
        assert abs(post.total() - 1.0) <= 1e-9
        np.testing.assert_allclose(post.alignment.sum(), 1.0, atol=1e-9)
        # independently computed joint terms
        p_gen = float(s.p_gen.data)
        per_pos = s.delta.data[:, y] if edit else (s.source_ids == y).astype(float)
        joint = np.concatenate([[p_gen * s.p_vocab.data[y]], (1 - p_gen) * s.attention.data * per_pos])
        evidence = pointer_mixture(s, y).item()
        np.testing.assert_allclose(joint.sum(), evidence, rtol=1e-13)
        np.testing.assert_allclose(post.generation, joint[0] / joint.sum(), rtol=1e-12)
        np.testing.assert_allclose(post.positions, joint[1:] / joint.sum(), rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(post.alignment, post.generation * s.attention.data + post.positions, rtol=1e-14)

    def test_zero_probability(self):
        s = PointerState(np.float64(0.0), np.array([1.0]), np.array([1.0, 0.0]), np.array([0]))
        with pytest.raises(UndefinedPosteriorError):
            posterior_alignment(s, 1)


def test_mask_token():
    out = mask_token(Value(np.zeros((2, 4))), 1)
    assert np.all(np.isneginf(out.data[:, 1])) and np.all(out.data[:, [0, 2, 3]] == 0)
