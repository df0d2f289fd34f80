"""Iterative back-translation on a synthetic string transduction task.

Source strings use symbols ``s0..s9`` and target strings ``t0..t9``; the gold
mapping sends each source symbol through a fixed permutation.  Both directions
share one encoder and each owns an attention decoder.  With only a handful of
labeled pairs the decoders' recurrent state memorizes them; pseudo pairs
decoded from the unlabeled pools are what pushes both directions toward the
position-aligned solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import NEG_INF, Adam, GRUCell, Params, Value, affine, glorot

N_SYMBOLS = 10
PAD, BOS, EOS = 0, 1, 2
SOURCE_OFFSET = 3
TARGET_OFFSET = SOURCE_OFFSET + N_SYMBOLS
VOCAB_SIZE = TARGET_OFFSET + N_SYMBOLS
MIN_LEN, MAX_LEN = 4, 12


# ----------------------------------------------------------------------
# the toy task
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TransductionTask:
    permutation: tuple[int, ...]

    @classmethod
    def create(cls, seed: int) -> "TransductionTask":
        rng = np.random.default_rng(seed)
        return cls(tuple(int(i) for i in rng.permutation(N_SYMBOLS)))

    def translate(self, source) -> np.ndarray:
        """Gold target ids for source ids."""
        return np.array([TARGET_OFFSET + self.permutation[int(s) - SOURCE_OFFSET] for s in source], dtype=int)

    def random_source(self, rng: np.random.Generator) -> np.ndarray:
        n = int(rng.integers(MIN_LEN, MAX_LEN + 1))
        return SOURCE_OFFSET + rng.integers(N_SYMBOLS, size=n)


@dataclass
class ToyData:
    labeled: list[tuple[np.ndarray, np.ndarray]]
    unlabeled_targets: list[np.ndarray]
    unlabeled_sources: list[np.ndarray]
    validation: list[tuple[np.ndarray, np.ndarray]]


def make_toy_data(
    task: TransductionTask, seed: int, n_labeled: int = 10, n_unlabeled: int = 500, n_validation: int = 100
) -> ToyData:
    """Labeled pairs are redrawn until together they use every source symbol.

    The unlabeled pools come from separately drawn sources (disjoint from the
    labeled set), so the target pool is not the translation of the source pool.
    """
    rng = np.random.default_rng(seed)
    while True:
        sources = [task.random_source(rng) for _ in range(n_labeled)]
        if len(set(np.concatenate(sources).tolist())) == N_SYMBOLS:
            break
    labeled = [(s, task.translate(s)) for s in sources]
    seen = {tuple(s) for s in sources}

    def fresh() -> np.ndarray:
        while True:
            s = task.random_source(rng)
            if tuple(s) not in seen:
                seen.add(tuple(s))
                return s

    unlabeled_targets = [task.translate(fresh()) for _ in range(n_unlabeled)]
    unlabeled_sources = [fresh() for _ in range(n_unlabeled)]
    validation = [(s, task.translate(s)) for s in (fresh() for _ in range(n_validation))]
    return ToyData(labeled, unlabeled_targets, unlabeled_sources, validation)


# ----------------------------------------------------------------------
# shared encoder, per-direction attention decoders
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Seq2SeqConfig:
    emb_dim: int = 32
    hidden: int = 32
    seed: int = 0
    use_state: bool = True


class SharedEncoder:
    """Token and absolute-position embeddings of the input plus an end sentinel.

    Attention keys are the position embeddings and values the token
    embeddings, so alignment and lexical translation are learned separately.
    """

    def __init__(self, params: Params, cfg: Seq2SeqConfig, rng: np.random.Generator):
        self.params = params
        params.add("enc.emb", 0.3 * rng.standard_normal((VOCAB_SIZE, cfg.emb_dim)))
        params.add("enc.pos", 0.3 * rng.standard_normal((MAX_LEN + 2, cfg.emb_dim)))
        self.dim = cfg.emb_dim

    def __call__(self, src: np.ndarray, lengths: np.ndarray) -> tuple[Value, Value, np.ndarray]:
        """``(keys, values, mask)`` over ``n + 1`` slots; slot ``len`` holds the end sentinel."""
        B, n = src.shape
        ids = np.concatenate([src, np.full((B, 1), PAD)], axis=1)
        ids[np.arange(B), lengths] = EOS
        slots = np.broadcast_to(np.arange(n + 1), (B, n + 1))
        mask = slots <= lengths[:, None]
        keys = self.params["enc.pos"][slots]
        values = self.params["enc.emb"][ids]
        return keys, values, mask


class AttentionDecoder:
    """Attention decoder whose query is the output position.

    The recurrent state (fed the previous output token) adds its own term to
    the output logits when ``use_state`` is set.
    """

    def __init__(self, params: Params, prefix: str, cfg: Seq2SeqConfig, allowed: np.ndarray, rng: np.random.Generator):
        H, E = cfg.hidden, cfg.emb_dim
        self.params = params
        self.prefix = prefix
        self.use_state = cfg.use_state
        self.hidden = H
        params.add(f"{prefix}.pos", 0.3 * rng.standard_normal((MAX_LEN + 2, E)))
        params.add(f"{prefix}.att", glorot(rng, (E, E)))
        params.add(f"{prefix}.out.w", glorot(rng, (E, H)))
        params.add(f"{prefix}.out.b", np.zeros(H))
        params.add(f"{prefix}.vocab.w", glorot(rng, (H, VOCAB_SIZE)))
        params.add(f"{prefix}.vocab.b", np.zeros(VOCAB_SIZE))
        if self.use_state:
            params.add(f"{prefix}.emb", 0.3 * rng.standard_normal((VOCAB_SIZE, E)))
            self.cell = GRUCell(params, f"{prefix}.gru", E, H, rng)
            params.add(f"{prefix}.state.w", glorot(rng, (H, VOCAB_SIZE)))
        self.blocked = ~allowed  # output ids this direction may never emit

    def p(self, name: str) -> Value:
        return self.params[f"{self.prefix}.{name}"]

    def initial_state(self, batch: int) -> Value:
        return Value(np.zeros((batch, self.hidden)))

    def attend(self, position: int, keys: Value, values: Value, mask: np.ndarray) -> Value:
        B, n, E = keys.shape
        query = nd.matmul(self.p("pos")[min(position, MAX_LEN + 1)], self.p("att"))
        scores = nd.matmul(keys, query)  # [B, n]
        att = nd.softmax(nd.masked_fill(scores, ~mask, NEG_INF), axis=-1)
        return nd.reshape(nd.matmul(nd.reshape(att, (B, 1, n)), values), (B, E))

    def step(self, prev_tokens: np.ndarray, position: int, h: Value, keys: Value, values: Value, mask: np.ndarray):
        """Emit output position ``position`` after ``prev_tokens``; returns (log-probs ``[B, V]``, new state)."""
        ctx = self.attend(position, keys, values, mask)
        hidden = nd.tanh(affine(ctx, self.p("out.w"), self.p("out.b")))
        logits = affine(hidden, self.p("vocab.w"), self.p("vocab.b"))
        if self.use_state:
            h = self.cell.step(self.cell.project_inputs(self.p("emb")[prev_tokens]), h)
            logits = logits + nd.matmul(h, self.p("state.w"))
        logits = nd.masked_fill(logits, np.broadcast_to(self.blocked, logits.shape), NEG_INF)
        return nd.log_softmax(logits, axis=-1), h


def _pad(seqs: list[np.ndarray], extra: int = 0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    out = np.full((len(seqs), lengths.max() + extra), PAD, dtype=int)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


class Seq2Seq:
    """One translation direction: the shared encoder plus this direction's decoder."""

    def __init__(self, encoder: SharedEncoder, decoder: AttentionDecoder):
        self.encoder = encoder
        self.decoder = decoder

    def _encode(self, sources: list[np.ndarray]):
        return self.encoder(*_pad(sources))

    def token_logprobs(self, sources: list[np.ndarray], targets: list[np.ndarray]) -> tuple[Value, int]:
        """Summed log-probability of every target (plus its end symbol) and the token count."""
        keys, values, mask = self._encode(sources)
        tgt, tgt_len = _pad(targets, extra=1)
        B, m = tgt.shape
        tgt[np.arange(B), tgt_len] = EOS
        h = self.decoder.initial_state(B)
        prev = np.full(B, BOS)
        total = Value(0.0)
        for t in range(m):
            logp, h = self.decoder.step(prev, t, h, keys, values, mask)
            live = (t <= tgt_len).astype(np.float64)
            picked = logp[np.arange(B), tgt[:, t]]
            total = total + nd.vsum(nd.where(live > 0, picked, Value(np.zeros(B))))
            prev = tgt[:, t]
        return total, int((tgt_len + 1).sum())

    def cross_entropy(self, pairs: list[tuple[np.ndarray, np.ndarray]], batch_size: int = 128) -> float:
        """Mean per-token negative log-likelihood (no gradient kept)."""
        total, tokens = 0.0, 0
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i : i + batch_size]
            lp, n = self.token_logprobs([s for s, _ in chunk], [t for _, t in chunk])
            total += float(lp.data)
            tokens += n
        return -total / tokens

    def beam_decode(self, sources: list[np.ndarray], beam: int = 3, max_extra: int = 2) -> list[np.ndarray]:
        """Length-normalized beam search run for all sources at once.

        Hypotheses run until every beam is dead or the step limit (source
        length plus ``max_extra``, at most ``MAX_LEN`` tokens) is reached; finished ones are ranked by mean
        per-token log-probability including the end symbol.
        """
        keys, values, mask = self._encode(sources)
        B = len(sources)
        max_steps = min(int(mask.sum(axis=1).max()) - 1 + max_extra, MAX_LEN) + 1
        # hypothesis arrays over B*beam rows; start with one live hypothesis per source
        rows = np.repeat(np.arange(B), beam)
        keys_b, values_b, mask_b = Value(keys.data[rows]), Value(values.data[rows]), mask[rows]
        h = self.decoder.initial_state(B * beam).data
        score = np.tile(np.r_[0.0, np.full(beam - 1, NEG_INF)], B)
        tokens = np.zeros((B * beam, 0), dtype=int)
        prev = np.full(B * beam, BOS)
        finished: list[list[tuple[float, np.ndarray]]] = [[] for _ in range(B)]
        for step in range(max_steps):
            logp, h_new = self.decoder.step(prev, step, Value(h), keys_b, values_b, mask_b)
            V = logp.shape[-1]
            cand = (score[:, None] + logp.data).reshape(B, beam * V)
            top = np.argsort(-cand, axis=1, kind="stable")[:, : 2 * beam]
            new_rows, new_tok, new_score = [], [], []
            for b in range(B):
                kept = 0
                for flat in top[b]:
                    s = cand[b, flat]
                    if not np.isfinite(s):
                        break
                    src_row, tok = b * beam + flat // V, flat % V
                    if tok == EOS:
                        finished[b].append((s / (step + 1), tokens[src_row].copy()))
                        continue
                    if kept < beam:
                        new_rows.append(src_row)
                        new_tok.append(tok)
                        new_score.append(s)
                        kept += 1
                while kept < beam:  # pad with dead hypotheses
                    new_rows.append(b * beam)
                    new_tok.append(PAD)
                    new_score.append(NEG_INF)
                    kept += 1
            idx = np.array(new_rows)
            tokens = np.concatenate([tokens[idx], np.array(new_tok)[:, None]], axis=1)
            h, score = h_new.data[idx], np.array(new_score)
            prev = np.array(new_tok)
            if not np.isfinite(score).any():
                break
        out = []
        for b in range(B):
            if finished[b]:
                best = max(finished[b], key=lambda x: x[0])[1]
            else:
                best = tokens[b * beam + int(np.argmax(score[b * beam : (b + 1) * beam]))][:MAX_LEN]
            out.append(np.asarray(best, dtype=int))
        return out


# ----------------------------------------------------------------------
# state and loops
# ----------------------------------------------------------------------
@dataclass
class BtState:
    params: Params
    forward: Seq2Seq
    backward: Seq2Seq
    labeled: list[tuple[np.ndarray, np.ndarray]]
    unlabeled_targets: list[np.ndarray]
    unlabeled_sources: list[np.ndarray]
    validation: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    iteration: int = 0
    init_lr: float = 3e-3
    phase_lr: float = 1e-3
    beam: int = 3
    phase_epochs: int = 3
    batch_size: int = 32
    seed: int = 0
    optimizers: dict = field(default_factory=dict)
    last_phase_losses: list[float] = field(default_factory=list)

    def optimizer(self, direction: str) -> Adam:
        """Adam over the shared encoder and this direction's decoder only."""
        if direction not in self.optimizers:
            decoder = "dec_f" if direction == "forward" else "dec_b"
            self.optimizers[direction] = Adam(self.params.subset("enc.", f"{decoder}."), lr=self.init_lr)
        return self.optimizers[direction]


def build_state(data: ToyData, cfg: Seq2SeqConfig = Seq2SeqConfig(), **kwargs) -> BtState:
    rng = np.random.default_rng(cfg.seed)
    params = Params()
    encoder = SharedEncoder(params, cfg, rng)
    ids = np.arange(VOCAB_SIZE)
    to_target = (ids >= TARGET_OFFSET) | (ids == EOS)
    to_source = ((ids >= SOURCE_OFFSET) & (ids < TARGET_OFFSET)) | (ids == EOS)
    forward = Seq2Seq(encoder, AttentionDecoder(params, "dec_f", cfg, to_target, rng))
    backward = Seq2Seq(encoder, AttentionDecoder(params, "dec_b", cfg, to_source, rng))
    return BtState(
        params, forward, backward, list(data.labeled), list(data.unlabeled_targets),
        list(data.unlabeled_sources), list(data.validation), seed=cfg.seed, **kwargs,
    )


SHIPPED_INIT_STEPS = 100


def shipped_toy(seed: int = 0) -> BtState:
    """The default task instance: 10 labeled pairs, 500 unlabeled strings per side, 100 validation pairs."""
    task = TransductionTask.create(seed)
    return build_state(make_toy_data(task, seed), Seq2SeqConfig(seed=seed))


def _model(state: BtState, direction: str) -> Seq2Seq:
    return state.forward if direction == "forward" else state.backward


def _train_pairs(
    state: BtState, direction: str, pairs: list[tuple[np.ndarray, np.ndarray]], epochs: int, lr: float, rng
) -> list[float]:
    """Minimize per-token NLL of ``direction`` on ``(input, output)`` pairs; returns per-epoch losses."""
    model, opt = _model(state, direction), state.optimizer(direction)
    opt.lr = lr
    losses = []
    for _ in range(epochs):
        total, tokens = 0.0, 0
        order = rng.permutation(len(pairs))
        for i in range(0, len(pairs), state.batch_size):
            chunk = [pairs[j] for j in order[i : i + state.batch_size]]
            opt.params.zero_grad()
            lp, n = model.token_logprobs([s for s, _ in chunk], [t for _, t in chunk])
            nd.backward(lp * (-1.0 / n))
            opt.step()
            total -= float(lp.data)
            tokens += n
        losses.append(total / tokens)
    return losses


def bt_init(state: BtState, steps: int) -> BtState:
    """Supervised training of both directions on the labeled pairs for ``steps`` full-batch updates."""
    if not state.labeled:
        raise ValueError("bt_init needs labeled pairs")
    rng = np.random.default_rng(state.seed)
    reverse = [(t, s) for s, t in state.labeled]
    for _ in range(steps):
        _train_pairs(state, "forward", state.labeled, 1, state.init_lr, rng)
        _train_pairs(state, "backward", reverse, 1, state.init_lr, rng)
    return state


def _phase_rng(state: BtState, phase: int) -> np.random.Generator:
    return np.random.default_rng([state.seed, state.iteration, phase])


def bt_backward_phase(state: BtState) -> BtState:
    """Pseudo-sources from the backward model train the forward model (plus replayed labeled pairs)."""
    pseudo_sources = state.backward.beam_decode(state.unlabeled_targets, beam=state.beam)
    pairs = [(s, t) for s, t in zip(pseudo_sources, state.unlabeled_targets) if len(s) > 0]
    state.last_phase_losses = _train_pairs(
        state, "forward", pairs + state.labeled, state.phase_epochs, state.phase_lr, _phase_rng(state, 0)
    )
    return state


def bt_forward_phase(state: BtState) -> BtState:
    """Pseudo-targets from the forward model train the backward model (plus replayed labeled pairs)."""
    pseudo_targets = state.forward.beam_decode(state.unlabeled_sources, beam=state.beam)
    pairs = [(t, s) for s, t in zip(state.unlabeled_sources, pseudo_targets) if len(t) > 0]
    reverse = [(t, s) for s, t in state.labeled]
    state.last_phase_losses = _train_pairs(
        state, "backward", pairs + reverse, state.phase_epochs, state.phase_lr, _phase_rng(state, 1)
    )
    return state


def exact_match(model: Seq2Seq, pairs: list[tuple[np.ndarray, np.ndarray]], beam: int = 3) -> float:
    hyps = model.beam_decode([s for s, _ in pairs], beam=beam)
    return float(np.mean([np.array_equal(h, t) for h, (_, t) in zip(hyps, pairs)]))


def evaluate_state(state: BtState) -> dict:
    reverse = [(t, s) for s, t in state.validation]
    return {
        "iter": state.iteration,
        "fwd_ce": state.forward.cross_entropy(state.validation),
        "bwd_ce": state.backward.cross_entropy(reverse),
        "exact_match": exact_match(state.forward, state.validation, state.beam),
    }


def bt_train(state: BtState, n_iters: int, log_path: str | Path | None = None) -> tuple[BtState, list[dict]]:
    """Alternate backward and forward phases; one validation record per iteration.

    Records are appended to ``log_path`` as JSON lines when given.
    """
    if n_iters < 0:
        raise ValueError("n_iters must be >= 0")
    metrics = []
    for _ in range(n_iters):
        bt_backward_phase(state)
        bt_forward_phase(state)
        state.iteration += 1
        record = evaluate_state(state)
        metrics.append(record)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return state, metrics
