"""Per-segment record labels and per-token copy/generate attributions."""

from __future__ import annotations

import numpy as np

from ..pointer import PointerState, posterior_alignment
from .data import RecordSet
from .decode import DecodeResult
from .model import SegModel, StepModel


def alignment_trace(model: SegModel, records: RecordSet, result: DecodeResult) -> dict:
    """Replay a decoded path and attribute every emitted token.

    Each token row holds the posterior probability that it was generated from
    the vocabulary (``generation``) and that it was copied from each source
    position (``positions``); the two always sum to one.
    """
    sm = StepModel(model, records)
    vocab = model.vocab
    src_words = vocab.words(sm.src)
    d = sm.d0
    trace = []
    for start, end, label in result.segments():
        rows = []
        for w in result.tokens[start:end]:
            att = sm.attention(d, label)
            log_vocab, p_gen, _ = sm.output(d, att, null=(label == 0))
            if label == 0:
                att = np.full(len(sm.src), 1.0 / len(sm.src))  # unused: p_gen is 1
            state = PointerState(np.float64(p_gen), att, np.exp(log_vocab), sm.src)
            post = posterior_alignment(state, int(w))
            rows.append(
                {
                    "token": vocab.itos[int(w)],
                    "generation": float(post.generation),
                    "positions": [float(p) for p in post.positions],
                }
            )
            d = sm.step(d, int(w))
        slot = "<null>" if label == 0 else records.records[label - 1][0]
        trace.append({"start": start, "end": end, "record": label, "slot": slot, "rows": rows})
    return {"source": src_words, "tokens": vocab.words(result.tokens), "segments": trace}


def format_trace(trace: dict) -> str:
    """Aligned text columns: one line per token, grouped by segment."""
    source = trace["source"]
    lines = ["source: " + " ".join(f"{i}:{w}" for i, w in enumerate(source))]
    for seg in trace["segments"]:
        lines.append(f"[{seg['start']:>3}, {seg['end']:>3})  record {seg['record']:<2} {seg['slot']}")
        for row in seg["rows"]:
            copy = 1.0 - row["generation"]
            best = int(np.argmax(row["positions"]))
            where = f"{best}:{source[best]}" if copy > 0 else "-"
            lines.append(f"    {row['token']:<14} gen {row['generation']:.3f}  copy {copy:.3f}  from {where}")
    return "\n".join(lines)
