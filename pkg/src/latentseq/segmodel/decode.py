"""Segment-by-segment constrained decoding and masked-selection decoding."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..lattice import SegmentationPath
from .data import RecordSet
from .model import SegModel, StepModel, encode_frozen

NEG_INF = -np.inf


class DecodeFailure(RuntimeError):
    """No admissible continuation remained."""


@dataclass
class DecodeResult:
    tokens: list[int]
    path: SegmentationPath | None
    score: float

    def segments(self) -> list[tuple[int, int, int]]:
        return [] if self.path is None else self.path.segments()


@dataclass
class _Hyp:
    tokens: tuple[int, ...]
    segments: tuple[tuple[int, int], ...]  # (start, record) per opened segment
    d: np.ndarray
    record: int | None  # None at a segment boundary
    seg_len: int
    used: frozenset
    prev: int | None
    prev_ctx: np.ndarray | None
    score: float
    done: bool = False

    def normalized(self) -> float:
        return self.score / max(1, len(self.tokens))


def _record_options(sm: StepModel, h: _Hyp, over_budget: bool) -> list[tuple[float, int]]:
    if h.prev is None:
        logp = sm.transition_logprobs(h.d, np.zeros_like(h.d), None)
    else:
        logp = sm.transition_logprobs(h.d, h.prev_ctx, h.prev)
    uncovered = set(range(1, sm.n_records + 1)) - h.used
    options = []
    for j in range(sm.n_records + 1):
        if j != 0 and j in h.used:
            continue
        if j == 0 and over_budget and uncovered:
            continue
        if np.isfinite(logp[j]):
            options.append((float(logp[j]), j))
    return options


def _token_logprobs(sm: StepModel, h: _Hyp, cfg: "DecodeOptions", over_budget: bool):
    vocab = sm.vocab
    j = h.record
    att = sm.attention(h.d, j)
    log_vocab, p_gen, ctx = sm.output(h.d, att, null=(j == 0))
    probs = p_gen * np.exp(log_vocab)
    if j != 0:
        np.add.at(probs, sm.src, (1.0 - p_gen) * att)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    logp[[vocab.pad, vocab.unk]] = NEG_INF
    covered = h.used | ({j} if j != 0 else set())
    all_covered = len(covered) == sm.n_records
    if h.seg_len == 0:
        logp[vocab.seg_end] = NEG_INF
        if j != 0:
            logp[vocab.text_end] = NEG_INF
    if not all_covered:
        logp[vocab.text_end] = NEG_INF
    if cfg.forbid_punct_segments and j != 0 and h.seg_len > 0:
        seg_tokens = h.tokens[len(h.tokens) - h.seg_len :]
        if all(t in cfg.punct_ids for t in seg_tokens):
            logp[vocab.seg_end] = NEG_INF
    if cfg.trigram_blocking and len(h.tokens) >= 2:
        a, b = h.tokens[-2], h.tokens[-1]
        seen = {h.tokens[i + 2] for i in range(len(h.tokens) - 2) if h.tokens[i] == a and h.tokens[i + 1] == b}
        for w in seen:
            logp[w] = NEG_INF
    if h.seg_len >= sm.model.max_len:
        keep = logp[[vocab.seg_end, vocab.text_end]].copy()
        logp[:] = NEG_INF
        logp[[vocab.seg_end, vocab.text_end]] = keep
    if over_budget and all_covered and np.isfinite(logp[vocab.text_end]):
        keep = logp[vocab.text_end]
        logp[:] = NEG_INF
        logp[vocab.text_end] = keep
    return logp, ctx


@dataclass
class DecodeOptions:
    beam: int = 1
    trigram_blocking: bool = False
    forbid_punct_segments: bool = False
    max_tokens: int = 60
    punct_ids: frozenset = frozenset()


def _expand(sm: StepModel, h: _Hyp, cfg: DecodeOptions) -> list[_Hyp]:
    vocab = sm.vocab
    over_budget = len(h.tokens) >= cfg.max_tokens
    if h.record is None:
        out = []
        for logp, j in sorted(_record_options(sm, h, over_budget), reverse=True)[: max(cfg.beam, 1)]:
            out.append(
                replace(h, record=j, seg_len=0, score=h.score + logp,
                        segments=h.segments + ((len(h.tokens), j),))
            )
        return out
    logp, ctx = _token_logprobs(sm, h, cfg, over_budget)
    order = np.argsort(-logp, kind="stable")[: cfg.beam]
    out = []
    j = h.record
    for w in order:
        lp = float(logp[w])
        if not np.isfinite(lp):
            break
        used = h.used | ({j} if j != 0 else set())
        if w == vocab.seg_end:
            out.append(replace(h, record=None, seg_len=0, used=used, prev=j, prev_ctx=ctx, score=h.score + lp))
        elif w == vocab.text_end:
            out.append(replace(h, tokens=h.tokens + (int(w),), used=used, score=h.score + lp, done=True))
        else:
            out.append(
                replace(h, tokens=h.tokens + (int(w),), d=sm.step(h.d, int(w)),
                        seg_len=h.seg_len + 1, score=h.score + lp)
            )
    return out


def _finish(h: _Hyp, text_end: int) -> DecodeResult:
    tokens = list(h.tokens)
    if tokens and tokens[-1] == text_end:
        tokens = tokens[:-1]
    starts = [s for s, _ in h.segments]
    labels = [r for _, r in h.segments]
    cuts, kept = [], []
    for k, (start, label) in enumerate(zip(starts, labels)):
        end = starts[k + 1] if k + 1 < len(starts) else len(tokens)
        end = min(end, len(tokens))
        if end > start:
            cuts.append(start)
            kept.append(label)
    path = SegmentationPath(tuple(cuts) + (len(tokens),), tuple(kept)) if kept else None
    return DecodeResult(tokens, path, h.score)


def constrained_decode(
    model: SegModel,
    records: RecordSet,
    beam: int = 1,
    trigram_blocking: bool = False,
    forbid_punct_segments: bool = False,
    max_tokens: int = 60,
) -> DecodeResult:
    """Generate text segment by segment while enforcing the record constraints.

    Every segment is non-empty, no non-null record is used twice, and the
    end-of-text token is only admissible once every record has been realized.
    ``beam=1`` is greedy; wider beams rank finished hypotheses by mean
    per-token log-probability.
    """
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    sm = StepModel(model, records)
    cfg = DecodeOptions(beam, trigram_blocking, forbid_punct_segments, max_tokens, model.vocab.punctuation_ids())
    active = [_Hyp((), (), sm.d0, None, 0, frozenset(), None, None, 0.0)]
    finished: list[_Hyp] = []
    hard_stop = 4 * max_tokens + 8 * (records.n_records + 1)
    for _ in range(hard_stop):
        if not active:
            break
        candidates = [c for h in active for c in _expand(sm, h, cfg)]
        if not candidates and not finished:
            raise DecodeFailure(
                f"no admissible continuation; partial tokens={list(active[0].tokens)}, "
                f"used records={sorted(active[0].used)}"
            )
        finished.extend(c for c in candidates if c.done)
        active = sorted((c for c in candidates if not c.done), key=lambda c: -c.normalized())[:beam]
        if len(finished) >= beam:
            break
    if not finished:
        raise DecodeFailure(f"decoding did not terminate within {hard_stop} expansions")
    best = max(finished, key=lambda c: c.normalized())
    return _finish(best, model.vocab.text_end)


def vrs_select_decode(model: SegModel, records: RecordSet, mask=None, max_tokens: int = 60) -> list[int]:
    """Greedy decoding conditioned only on the selected source positions.

    The initial state pools the selected encodings and every attention step
    is renormalized over the selection, so unselected tokens get exactly zero
    mass.  No segment structure is used; ``mask=None`` selects everything.
    """
    sm = StepModel(model, records)
    mask = np.ones(len(sm.src)) if mask is None else np.asarray(mask, dtype=np.float64)
    if mask.shape != sm.src.shape:
        raise ValueError(f"mask shape {mask.shape} != source length {sm.src.shape}")
    if not np.any(mask > 0):
        raise ValueError("empty selection mask")
    _, d = encode_frozen(model, sm.src, select=mask)
    vocab = model.vocab
    out: list[int] = []
    for _ in range(max_tokens):
        att = sm.attention(d, record=-1, select=mask)
        log_vocab, p_gen, _ = sm.output(d, att, null=False)
        vocab_probs = np.exp(log_vocab)
        vocab_probs[vocab.seg_end] = 0.0
        probs = p_gen * vocab_probs / vocab_probs.sum()
        np.add.at(probs, sm.src, (1.0 - p_gen) * att)
        probs[[vocab.pad, vocab.unk]] = 0.0
        w = int(np.argmax(probs))
        if w == vocab.text_end:
            break
        out.append(w)
        d = sm.step(d, w)
    return out
