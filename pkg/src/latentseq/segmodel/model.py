"""Neural segmental generator: record encoder, record-masked pointer decoder, transition scorer.

The decoder's recurrent state runs over the output tokens only, so a single
sweep yields every token probability under every record.  Segment scores
for all (start, length, record) triples are then differences of cumulative
sums plus the end-of-segment probability, which is the cached-table form the
lattice consumes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import ndgrad as nd
from ..lattice import SegmentalPotentials, self_transition_mask
from ..lattice.semimarkov import semimarkov_log_z_and_expected_segments
from ..ndgrad import NEG_INF, GRUCell, Params, Value, affine, glorot
from ..pointer import PointerState, pointer_mixture
from .data import Example, RecordSet, Utterance, Vocab


@dataclass
class SegModelConfig:
    vocab_size: int
    emb_dim: int = 32
    hidden: int = 64
    max_len: int = 6
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class SegModel:
    def __init__(self, config: SegModelConfig, vocab: Vocab):
        if len(vocab) != config.vocab_size:
            raise ValueError("vocabulary size disagrees with config")
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        V, E, H = config.vocab_size, config.emb_dim, config.hidden
        p = self.params = Params()
        p.add("emb", 0.3 * rng.standard_normal((V, E)))
        self.encoder = GRUCell(p, "enc", E, H, rng)
        self.decoder = GRUCell(p, "dec", E, H, rng)
        p.add("init.w", glorot(rng, (H, H)))
        p.add("init.b", np.zeros(H))
        p.add("att.w", glorot(rng, (H, H)))
        p.add("out.dec", glorot(rng, (H, H)))
        p.add("out.ctx", glorot(rng, (H, H)))
        p.add("out.b", np.zeros(H))
        p.add("vocab.w", glorot(rng, (H, V)))
        p.add("vocab.b", np.zeros(V))
        p.add("gen.w", 0.1 * rng.standard_normal(H))
        p.add("gen.b", np.asarray(0.0))
        p.add("trans.ctx", glorot(rng, (H, E)))
        p.add("trans.dec", glorot(rng, (H, E)))
        p.add("trans.null", 0.3 * rng.standard_normal(E))

    @property
    def max_len(self) -> int:
        return self.config.max_len


# ----------------------------------------------------------------------
# batching
# ----------------------------------------------------------------------
@dataclass
class Batch:
    src: np.ndarray  # [B, n] source token ids
    owner: np.ndarray  # [B, n] 1-based record of each source token, 0 for padding
    n_src: np.ndarray  # [B]
    n_records: np.ndarray  # [B]
    tgt: np.ndarray  # [B, m] output token ids
    lengths: np.ndarray  # [B]

    @property
    def size(self) -> int:
        return len(self.lengths)

    @property
    def max_records(self) -> int:
        return int(self.n_records.max())


def make_batch(vocab: Vocab, records: list[RecordSet], texts: list[Utterance]) -> Batch:
    flat = [r.flatten(vocab) for r in records]
    B = len(records)
    n = max(len(ids) for ids, _ in flat)
    m = max(len(t) for t in texts)
    if min(len(t) for t in texts) < 1:
        raise ValueError("every utterance needs at least one token")
    src = np.full((B, n), vocab.pad, dtype=int)
    owner = np.zeros((B, n), dtype=int)
    tgt = np.full((B, m), vocab.pad, dtype=int)
    for b, ((ids, own), text) in enumerate(zip(flat, texts)):
        src[b, : len(ids)] = ids
        owner[b, : len(own)] = own
        tgt[b, : len(text)] = text.tokens
    return Batch(
        src,
        owner,
        np.array([len(ids) for ids, _ in flat]),
        np.array([r.n_records for r in records]),
        tgt,
        np.array([len(t) for t in texts]),
    )


def batch_examples(vocab: Vocab, examples: list[Example]) -> Batch:
    return make_batch(vocab, [e.records for e in examples], [e.text for e in examples])


# ----------------------------------------------------------------------
# encoder
# ----------------------------------------------------------------------
def _run_gru(cell: GRUCell, inputs: Value, h0: Value) -> list[Value]:
    projected = cell.project_inputs(inputs)
    h, states = h0, []
    for i in range(inputs.shape[1]):
        h = cell.step(projected[:, i], h)
        states.append(h)
    return states


def encode(model: SegModel, src: np.ndarray, n_src: np.ndarray, select=None) -> tuple[Value, Value]:
    """Encoder states ``[B, n, H]`` and initial decoder state ``[B, H]``.

    The initial state is computed from ``sum_i select_i * h_i / n``; ``select``
    defaults to the indicator of real (non-padding) positions.
    """
    P = model.params
    B, n = src.shape
    H = model.config.hidden
    states = nd.stack(_run_gru(model.encoder, P["emb"][src], Value(np.zeros((B, H)))), axis=1)
    valid = (np.arange(n)[None, :] < n_src[:, None]).astype(np.float64)
    weights = nd.as_value(valid if select is None else select)
    weights = weights * np.broadcast_to(1.0 / n_src[:, None], (B, n))
    pooled = nd.reshape(nd.matmul(nd.reshape(weights, (B, 1, n)), states), (B, H))
    return states, nd.tanh(affine(pooled, P["init.w"], P["init.b"]))


def record_embeddings(model: SegModel, batch: Batch) -> Value:
    """``[B, K+1, E]``: a learned null vector, then max-pooled word vectors per record."""
    P = model.params
    B, n = batch.src.shape
    K, E = batch.max_records, model.config.emb_dim
    member = batch.owner[:, None, :] == np.arange(1, K + 1)[None, :, None]  # [B, K, n]
    member[..., 0] |= ~member.any(-1)  # padded record slots pool a real token; never reachable
    words = nd.broadcast_to(nd.reshape(P["emb"][batch.src], (B, 1, n, E)), (B, K, n, E))
    blocked = np.broadcast_to(~member[..., None], (B, K, n, E))
    pooled = nd.vmax(nd.masked_fill(words, blocked, NEG_INF), axis=2)
    null = nd.broadcast_to(nd.reshape(P["trans.null"], (1, 1, E)), (B, 1, E))
    return nd.concat([null, pooled], axis=1)


# ----------------------------------------------------------------------
# the cached sweep
# ----------------------------------------------------------------------
def _decoder_states(model: SegModel, batch: Batch, d0: Value) -> Value:
    P = model.params
    inputs = P["emb"][batch.tgt]
    states = _run_gru(model.decoder, inputs, d0)
    return nd.stack([d0] + states, axis=1)  # [B, m+1, H]


def _masked_record_attention(model: SegModel, batch: Batch, dec: Value, enc: Value) -> Value:
    """``[B, T, K, n]`` attention of every decoder state over each record's tokens."""
    B, T, H = dec.shape
    n = enc.shape[1]
    K = batch.max_records
    scores = nd.matmul(nd.matmul(dec, model.params["att.w"]), nd.swapaxes(enc, 1, 2))  # [B, T, n]
    scores = nd.broadcast_to(nd.reshape(scores, (B, T, 1, n)), (B, T, K, n))
    outside = batch.owner[:, None, None, :] != np.arange(1, K + 1)[None, None, :, None]
    return nd.softmax(nd.masked_fill(scores, np.broadcast_to(outside, (B, T, K, n)), NEG_INF), axis=-1)


def _contexts(attention: Value, enc: Value) -> Value:
    """``[B, T, K+1, H]`` context vectors; the null record's context is zero."""
    B, T, K, n = attention.shape
    H = enc.shape[-1]
    ctx = nd.reshape(nd.matmul(nd.reshape(attention, (B, T * K, n)), enc), (B, T, K, H))
    return nd.concat([Value(np.zeros((B, T, 1, H))), ctx], axis=2)


def _output_layer(model: SegModel, dec: Value, ctx: Value) -> tuple[Value, Value]:
    """Vocabulary logits ``[B, T, C, V]`` and generation logits ``[B, T, C]``."""
    P = model.params
    B, T, C, H = ctx.shape
    from_dec = nd.broadcast_to(nd.reshape(nd.matmul(dec, P["out.dec"]), (B, T, 1, H)), (B, T, C, H))
    hidden = nd.tanh(from_dec + affine(ctx, P["out.ctx"], P["out.b"]))
    return affine(hidden, P["vocab.w"], P["vocab.b"]), nd.matmul(hidden, P["gen.w"]) + P["gen.b"]


def _transition_tables(model: SegModel, batch: Batch, dec: Value, ctx: Value, records: Value):
    P = model.params
    B, T, C, H = ctx.shape
    E = model.config.emb_dim
    m = T - 1
    query = nd.broadcast_to(
        nd.reshape(nd.matmul(dec[:, :m], P["trans.dec"]), (B, m, 1, E)), (B, m, C, E)
    ) + nd.matmul(ctx[:, :m], P["trans.ctx"])  # [B, m, q, E]
    scores = nd.matmul(nd.reshape(query, (B, m * C, E)), nd.swapaxes(records, 1, 2))
    scores = nd.transpose(nd.reshape(scores, (B, m, C, C)), (0, 1, 3, 2))  # [B, m, j, q]
    absent = np.arange(C)[None, :] > batch.n_records[:, None]  # [B, j]
    forbidden = self_transition_mask(C)[None, None] | absent[:, None, :, None]
    trans = nd.log_softmax(nd.masked_fill(scores, np.broadcast_to(forbidden, scores.shape), NEG_INF), axis=2)
    first = nd.reshape(
        nd.matmul(records, nd.reshape(nd.matmul(dec[:, 0], P["trans.dec"]), (B, E, 1))), (B, C)
    )
    init = nd.log_softmax(nd.masked_fill(first, absent, NEG_INF), axis=-1)
    return trans, init


def score_tables(model: SegModel, batch: Batch) -> SegmentalPotentials:
    """All segment and transition log-probabilities from one decoder sweep."""
    if batch.lengths.min() < 1:
        raise ValueError("empty utterance")
    vocab = model.vocab
    B, m = batch.tgt.shape
    L = model.max_len
    enc, d0 = encode(model, batch.src, batch.n_src)
    dec = _decoder_states(model, batch, d0)
    attention = _masked_record_attention(model, batch, dec, enc)
    ctx = _contexts(attention, enc)
    logits, gen_logit = _output_layer(model, dec, ctx)
    C = ctx.shape[2]

    # next-token log-probabilities from states 0..m-1
    log_vocab = nd.log_softmax(logits[:, :m], axis=-1)
    rows, steps = np.indices((B, m))
    null_tok = log_vocab[rows, steps, 0, batch.tgt]  # [B, m]
    st = PointerState(
        nd.sigmoid(gen_logit[:, :m, 1:]),
        attention[:, :m],
        nd.exp(log_vocab[:, :, 1:]),
        batch.src[:, None, None, :],
    )
    record_tok = nd.log(pointer_mixture(st, np.broadcast_to(batch.tgt[:, :, None], (B, m, C - 1))))
    tok = nd.concat([nd.reshape(null_tok, (B, m, 1)), record_tok], axis=2)  # [B, m, C]

    # end-of-segment log-probabilities from states 1..m ($ is never copied)
    seg_end = nd.log_softmax(logits[:, 1:], axis=-1)[:, :, :, vocab.seg_end]
    gate = nd.concat([Value(np.zeros((B, m, 1))), nd.log_sigmoid(gen_logit[:, 1:, 1:])], axis=2)
    seg_end = seg_end + gate  # [B, m, C]

    cum = nd.concat([Value(np.zeros((B, 1, C))), nd.cumsum(tok, axis=1)], axis=1)
    starts = np.broadcast_to(np.arange(m)[:, None], (m, L))
    ends = starts + np.arange(1, L + 1)[None, :]
    clipped = np.minimum(ends, m)
    gen = cum[:, clipped] - cum[:, starts] + seg_end[:, clipped - 1]
    past_end = np.broadcast_to((ends[None] > batch.lengths[:, None, None])[..., None], (B, m, L, C))
    gen = nd.masked_fill(gen, past_end, NEG_INF)

    trans, init = _transition_tables(model, batch, dec, ctx, record_embeddings(model, batch))
    return SegmentalPotentials(gen, trans, init, batch.lengths)


def train_loss(
    model: SegModel,
    batch: Batch,
    eta=None,
    gamma: float = 1.0,
    regularize: bool = True,
) -> tuple[Value, dict]:
    """Mean over the batch of ``-log p(y|X) + max(|E[segments] - eta|, gamma)``.

    ``eta`` defaults to each item's record count.
    """
    eta = batch.n_records.astype(np.float64) if eta is None else np.broadcast_to(np.asarray(eta, float), (batch.size,))
    if np.any(eta < 1) or gamma < 0:
        raise ValueError("need eta >= 1 and gamma >= 0")
    pots = score_tables(model, batch)
    log_z, expected = semimarkov_log_z_and_expected_segments(pots)
    loss = -log_z
    if regularize:
        loss = loss + nd.maximum(nd.vabs(expected - eta), gamma)
    stats = {
        "nll": float(-log_z.data.sum()),
        "tokens": int(batch.lengths.sum()),
        "expected_segments": expected.data.copy(),
    }
    return nd.mean(loss), stats


# ----------------------------------------------------------------------
# single-step path (decoding and isolated recomputation)
# ----------------------------------------------------------------------
class StepModel:
    """Read-only numpy view of a model for one input, evaluated one token at a time."""

    def __init__(self, model: SegModel, records: RecordSet):
        self.model = model
        self.vocab = model.vocab
        self.p = {k: v.data for k, v in model.params.items()}
        self.src, self.owner = records.flatten(model.vocab)
        self.n_records = records.n_records
        enc, d0 = encode_frozen(model, self.src)
        self.enc = enc
        self.d0 = d0
        self.record_vectors = self._record_vectors()

    def _record_vectors(self) -> np.ndarray:
        emb = self.p["emb"]
        pooled = [emb[self.src[self.owner == k]].max(0) for k in range(1, self.n_records + 1)]
        return np.stack([self.p["trans.null"]] + pooled)

    def step(self, d: np.ndarray, token: int) -> np.ndarray:
        return _gru_step_np(self.p, "dec", self.p["emb"][token], d)

    def attention(self, d: np.ndarray, record: int, select: np.ndarray | None = None) -> np.ndarray:
        """Attention over all source positions; zero outside ``record`` (or outside ``select``)."""
        scores = self.enc @ (self.p["att.w"].T @ d)
        if select is None:
            allowed = self.owner == record
            weights = allowed.astype(np.float64)
        else:
            weights = np.asarray(select, dtype=np.float64)
            allowed = weights > 0
        if not allowed.any():
            return np.zeros(len(self.src))
        shifted = np.where(allowed, scores - scores[allowed].max(), NEG_INF)
        unnorm = np.exp(shifted) * weights
        return unnorm / unnorm.sum()

    def output(self, d: np.ndarray, attention: np.ndarray, null: bool):
        """``(log p_vocab, p_gen, context)`` for one decoder state."""
        ctx = np.zeros_like(d) if null else attention @ self.enc
        hidden = np.tanh(d @ self.p["out.dec"] + ctx @ self.p["out.ctx"] + self.p["out.b"])
        logits = hidden @ self.p["vocab.w"] + self.p["vocab.b"]
        log_vocab = logits - np.logaddexp.reduce(logits)
        p_gen = 1.0 if null else float(1.0 / (1.0 + np.exp(-(hidden @ self.p["gen.w"] + self.p["gen.b"]))))
        return log_vocab, p_gen, ctx

    def transition_logprobs(self, d: np.ndarray, ctx: np.ndarray, prev: int | None) -> np.ndarray:
        """Log-probabilities over the next record given the state after the previous segment."""
        query = d @ self.p["trans.dec"] + (0.0 if prev is None else ctx @ self.p["trans.ctx"])
        scores = self.record_vectors @ query
        if prev is not None and prev != 0:
            scores = scores.copy()
            scores[prev] = NEG_INF
        return scores - np.logaddexp.reduce(scores)


def _gru_step_np(p: dict, prefix: str, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    H = h.shape[-1]
    proj = x @ p[f"{prefix}.w_in"] + p[f"{prefix}.bias"]
    rec = h @ p[f"{prefix}.w_rec"]
    gates = 0.5 * (1.0 + np.tanh(0.5 * (proj[: 2 * H] + rec[: 2 * H])))
    reset, update = gates[:H], gates[H:]
    cand = np.tanh(proj[2 * H :] + reset * rec[2 * H :])
    return cand + update * (h - cand)


def encode_frozen(model: SegModel, src: np.ndarray, select: np.ndarray | None = None):
    p = {k: v.data for k, v in model.params.items()}
    H = model.config.hidden
    h = np.zeros(H)
    states = []
    for tok in src:
        h = _gru_step_np(p, "enc", p["emb"][tok], h)
        states.append(h)
    enc = np.stack(states)
    weights = np.ones(len(src)) if select is None else np.asarray(select, dtype=np.float64)
    pooled = weights @ enc / len(src)
    return enc, np.tanh(pooled @ p["init.w"] + p["init.b"])


def segment_logprob(model: SegModel, records: RecordSet, text: Utterance, start: int, length: int, record: int) -> float:
    """Score of one segment recomputed from scratch, token by token.

    Covers tokens ``start+1 .. start+length`` (1-based) emitted by ``record``
    and the closing end-of-segment symbol.
    """
    sm = StepModel(model, records)
    vocab = model.vocab
    d = sm.d0
    for tok in text.tokens[:start]:
        d = sm.step(d, tok)
    total = 0.0
    null = record == 0
    for tok in text.tokens[start : start + length]:
        att = sm.attention(d, record)
        log_vocab, p_gen, _ = sm.output(d, att, null)
        copied = float(att[sm.src == tok].sum())
        total += np.log(p_gen * np.exp(log_vocab[tok]) + (1.0 - p_gen) * copied)
        d = sm.step(d, tok)
    log_vocab, p_gen, _ = sm.output(d, sm.attention(d, record), null)
    return float(total + np.log(p_gen) + log_vocab[vocab.seg_end])


# ----------------------------------------------------------------------
# masked-selection likelihood (no segment structure)
# ----------------------------------------------------------------------
def vrs_loglik(model: SegModel, batch: Batch, beta) -> Value:
    """``log p(Y | X, beta)`` per item, shape ``[B]``.

    ``beta`` in ``[0, 1]^{B x n}`` weights the source positions: the initial
    state pools ``beta``-weighted encodings and every attention step is
    reweighted by ``beta`` (zero weight means the position is invisible).
    The end-of-segment symbol is excluded from the output vocabulary.
    """
    beta = np.asarray(beta, dtype=np.float64)
    B, n = batch.src.shape
    if beta.shape != (B, n):
        raise ValueError(f"beta shape {beta.shape} != {(B, n)}")
    valid = np.arange(n)[None, :] < batch.n_src[:, None]
    beta = np.where(valid, beta, 0.0)
    if np.any(beta.sum(axis=1) <= 0):
        raise ValueError("every item needs at least one selected position")
    m = batch.tgt.shape[1]
    enc, d0 = encode(model, batch.src, batch.n_src, select=beta)
    dec = _decoder_states(model, batch, d0)[:, :m]  # [B, m, H]
    scores = nd.matmul(nd.matmul(dec, model.params["att.w"]), nd.swapaxes(enc, 1, 2))  # [B, m, n]
    with np.errstate(divide="ignore"):
        log_beta = np.broadcast_to(np.log(beta)[:, None, :], (B, m, n))
    hidden_pos = ~np.isfinite(log_beta)
    scores = nd.masked_fill(scores, hidden_pos, NEG_INF) + np.where(hidden_pos, 0.0, log_beta)
    attention = nd.softmax(scores, axis=-1)
    ctx = nd.reshape(nd.matmul(attention, enc), (B, m, 1, enc.shape[-1]))
    logits, gen_logit = _output_layer(model, dec, ctx)
    blocked = np.zeros(logits.shape, dtype=bool)
    blocked[..., model.vocab.seg_end] = True
    log_vocab = nd.log_softmax(nd.masked_fill(logits, blocked, NEG_INF), axis=-1)
    V = log_vocab.shape[-1]
    st = PointerState(
        nd.sigmoid(nd.reshape(gen_logit, (B, m))),
        attention,
        nd.exp(nd.reshape(log_vocab, (B, m, V))),
        batch.src[:, None, :],
    )
    in_text = np.arange(m)[None, :] < batch.lengths[:, None]
    probs = pointer_mixture(st, np.where(in_text, batch.tgt, 0))
    token_logp = nd.log(nd.where(in_text, probs, Value(np.ones((B, m)))))
    return nd.vsum(token_logp, axis=1)
