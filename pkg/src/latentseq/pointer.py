"""Copy/point output laws.

A pointer step mixes a vocabulary softmax with mass copied from attended
source positions.  In hard-copy mode a position can only emit its own
token; in edit mode each position carries a full distribution over the
vocabulary (a relation edit of its embedding).  All arrays may carry
leading batch axes as long as they agree across fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .ndgrad import Params, Value, affine, glorot

GIGAWORD_TOPK, XSUM_TOPK, CNNDM_TOPK = 6, 10, 14


class UndefinedPosteriorError(ValueError):
    """The observed token has zero probability under the pointer law."""


@dataclass
class EmbeddingTable:
    """Word vectors shared by the input lookup and the output projection."""

    matrix: Value

    def __post_init__(self):
        self.matrix = nd.as_value(self.matrix)

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    def embed(self, ids) -> Value:
        return self.matrix[np.asarray(ids)]

    def output_logits(self, vectors) -> Value:
        return nd.matmul(vectors, nd.transpose(self.matrix))


def orthonormal_table(vocab_size: int, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    """Rows are orthonormal, so each word's own vector dominates its inner products."""
    if vocab_size > dim:
        raise ValueError("orthonormal rows need vocab_size <= dim")
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return EmbeddingTable(q[:vocab_size])


@dataclass
class PointerState:
    p_gen: Value
    attention: Value
    p_vocab: Value
    source_ids: np.ndarray
    delta: Value | None = None

    def __post_init__(self):
        self.p_gen = nd.as_value(self.p_gen)
        self.attention = nd.as_value(self.attention)
        self.p_vocab = nd.as_value(self.p_vocab)
        self.source_ids = np.asarray(self.source_ids, dtype=int)
        if self.delta is not None:
            self.delta = nd.as_value(self.delta)
        lead = self.attention.shape[:-1]
        if self.p_gen.shape != lead or self.p_vocab.shape[:-1] != lead:
            raise ValueError("p_gen, attention and p_vocab disagree on leading axes")

    @property
    def vocab_size(self) -> int:
        return self.p_vocab.shape[-1]

    def validate(self, atol: float = 1e-9) -> None:
        if not np.allclose(self.attention.data.sum(-1), 1.0, atol=atol):
            raise ValueError("attention is not on the simplex")
        if not np.allclose(self.p_vocab.data.sum(-1), 1.0, atol=atol):
            raise ValueError("p_vocab is not on the simplex")
        if np.any((self.p_gen.data < 0) | (self.p_gen.data > 1)):
            raise ValueError("p_gen outside [0, 1]")


def _gather_last(values: Value, ids: np.ndarray) -> Value:
    """``values[..., ids[...]]`` elementwise over the leading axes."""
    lead = values.shape[:-1]
    ids = np.broadcast_to(np.asarray(ids, dtype=int), lead)
    if not lead:
        return values[int(ids)]
    return values[tuple(np.indices(lead)) + (ids,)]


def copy_mass(st: PointerState, y) -> Value:
    """``sum_i attention[i] * delta_i(y)`` (hard copy when ``delta`` is None)."""
    y = np.asarray(y, dtype=int)
    if st.delta is None:
        ids = np.broadcast_to(st.source_ids, st.attention.shape)
        hits = (ids == y[..., None]).astype(np.float64)
        return nd.vsum(st.attention * hits, axis=-1)
    n = st.attention.shape[-1]
    per_position = _gather_last(st.delta, np.broadcast_to(y[..., None], st.attention.shape[:-1] + (n,)))
    return nd.vsum(st.attention * per_position, axis=-1)


def pointer_mixture(st: PointerState, y) -> Value:
    """Probability of token ``y``: ``p_gen * p_vocab[y] + (1 - p_gen) * copy``."""
    generated = _gather_last(st.p_vocab, y)
    return st.p_gen * generated + (1.0 - st.p_gen) * copy_mass(st, y)


def output_distribution(st: PointerState) -> Value:
    """The full mixture over the vocabulary, shape ``[..., V]``."""
    V = st.vocab_size
    if st.delta is None:
        ids = np.broadcast_to(st.source_ids, st.attention.shape)
        onehot = (ids[..., None] == np.arange(V)).astype(np.float64)
        if st.attention.ndim == 1:
            copied = nd.matmul(st.attention, onehot)
        else:
            att = nd.reshape(st.attention, st.attention.shape[:-1] + (1, st.attention.shape[-1]))
            copied = nd.reshape(nd.matmul(att, onehot), st.p_vocab.shape)
    else:
        att = nd.reshape(st.attention, st.attention.shape[:-1] + (1, st.attention.shape[-1]))
        if st.attention.ndim == 1:
            copied = nd.reshape(nd.matmul(att, st.delta), (V,))
        else:
            copied = nd.reshape(nd.matmul(att, st.delta), st.p_vocab.shape)
    shape = st.p_vocab.shape
    p_gen = st.p_gen if st.p_gen.ndim == 0 else nd.broadcast_to(nd.reshape(st.p_gen, st.p_gen.shape + (1,)), shape)
    return p_gen * st.p_vocab + (1.0 - p_gen) * copied


class RelationNet:
    """Two-layer map from (decoder state, encoder state) to an embedding-space edit.

    The second layer is added back onto the first (residual connection).
    """

    def __init__(self, params: Params, prefix: str, n_in: int, dim: int, rng: np.random.Generator):
        self.w1 = params.add(f"{prefix}.w1", glorot(rng, (n_in, dim)))
        self.b1 = params.add(f"{prefix}.b1", np.zeros(dim))
        self.w2 = params.add(f"{prefix}.w2", glorot(rng, (dim, dim)))
        self.b2 = params.add(f"{prefix}.b2", np.zeros(dim))

    def __call__(self, features: Value) -> Value:
        hidden = nd.tanh(affine(features, self.w1, self.b1))
        return hidden + nd.tanh(affine(hidden, self.w2, self.b2))


def relation_edit(dec_state, enc_state, x_embed, emb: EmbeddingTable, relation_net) -> Value:
    """Distribution ``softmax((r + x_embed) @ emb.T)`` with ``r = relation_net(dec ; enc)``.

    ``enc_state`` and ``x_embed`` may be stacked over source positions
    (``[n, d]`` and ``[n, e]``); ``dec_state`` is then shared by all rows.
    """
    dec_state, enc_state, x_embed = nd.as_value(dec_state), nd.as_value(enc_state), nd.as_value(x_embed)
    if enc_state.ndim == 2 and dec_state.ndim == 1:
        dec_state = nd.broadcast_to(dec_state, (enc_state.shape[0], dec_state.shape[0]))
    r = relation_net(nd.concat([dec_state, enc_state], axis=-1))
    return nd.softmax(emb.output_logits(r + x_embed), axis=-1)


def topk_positions(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores; ties keep the lower index first."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    return np.argsort(-scores, kind="stable")[:k]


def contextual_scores(enc_states, target_state) -> np.ndarray:
    """Inner products between encoded source positions and the encoded target token."""
    return np.asarray(nd.as_value(enc_states).data @ nd.as_value(target_state).data)


def embedding_scores(emb: EmbeddingTable, source_ids, y: int) -> np.ndarray:
    """Context-free comparator: raw embedding inner products."""
    table = emb.matrix.data
    return table[np.asarray(source_ids)] @ table[y]


def topk_point_marginal(st: PointerState, target_embed_scores, k: int, y: int | None = None) -> Value:
    """Point mass restricted to the ``k`` positions that score highest against the target.

    In edit mode ``delta[i, y]`` is read for target ``y``; in hard-copy mode a
    position contributes only if it holds ``y``.
    """
    if st.attention.ndim != 1:
        raise ValueError("topk_point_marginal works on a single step")
    chosen = topk_positions(target_embed_scores, k)
    if y is None:
        raise ValueError("target token y is required")
    if st.delta is None:
        weights = (st.source_ids[chosen] == y).astype(np.float64)
    else:
        weights = st.delta[chosen, y]
    terms = st.attention[chosen] * weights
    # running sum in rank order, so growing k never lowers the value by rounding
    total = terms[0]
    for i in range(1, k):
        total = total + terms[i]
    return total


@dataclass
class AlignmentPosterior:
    generation: float
    positions: np.ndarray
    alignment: np.ndarray

    def total(self) -> float:
        return self.generation + float(self.positions.sum())


def posterior_alignment(st: PointerState, y: int) -> AlignmentPosterior:
    """Bayes attribution of ``y`` to generation mode or to each source position.

    ``alignment`` spreads the generation-mode share over positions in
    proportion to attention and adds each position's own copy share.
    """
    p_gen = float(st.p_gen.data)
    attention = st.attention.data
    if st.delta is None:
        per_position = (st.source_ids == y).astype(np.float64)
    else:
        per_position = st.delta.data[:, y]
    joint_gen = p_gen * float(st.p_vocab.data[y])
    joint_pos = (1.0 - p_gen) * attention * per_position
    evidence = joint_gen + joint_pos.sum()
    if not evidence > 0:
        raise UndefinedPosteriorError(f"token {y} has zero probability; posterior undefined")
    gen = joint_gen / evidence
    pos = joint_pos / evidence
    return AlignmentPosterior(gen, pos, gen * attention + pos)


def mask_token(logits: Value, token_id: int) -> Value:
    """Set one vocabulary logit to ``-inf`` (used to keep UNK out of decoded text)."""
    mask = np.zeros(logits.shape, dtype=bool)
    mask[..., token_id] = True
    return nd.masked_fill(logits, mask, nd.NEG_INF)
