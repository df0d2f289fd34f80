"""Corpus-level metrics for the segmental model."""

from __future__ import annotations

import numpy as np

from ..lattice import semimarkov_map
from ..lattice.semimarkov import semimarkov_log_z_and_expected_segments
from .data import COPY_SLOTS, Example
from .decode import DecodeResult, constrained_decode
from .model import SegModel, batch_examples, score_tables


def record_usage(result: DecodeResult, n_records: int) -> np.ndarray:
    """How many segments each non-null record labels (index 0 is record 1)."""
    counts = np.zeros(n_records, dtype=int)
    for _, _, label in result.segments():
        if label != 0:
            counts[label - 1] += 1
    return counts


def faithful_records(result: DecodeResult, example: Example) -> tuple[int, int]:
    """(faithful, checked) over copy-slot records.

    A record is faithful when its value tokens appear contiguously inside the
    segment it labels.
    """
    ok = checked = 0
    tokens = result.tokens
    for k, (slot, values) in enumerate(example.records.records, start=1):
        if slot not in COPY_SLOTS:
            continue
        checked += 1
        for start, end, label in result.segments():
            if label != k:
                continue
            seg = tokens[start:end]
            n = len(values)
            if any(tuple(seg[i : i + n]) == values for i in range(len(seg) - n + 1)):
                ok += 1
            break
    return ok, checked


def boundary_f1(predicted: list[tuple[int, int, int]], gold: list[tuple[int, int, int]]) -> float:
    """F1 over interior segment boundaries; 1.0 when both sides have none."""
    pred = {s for s, _, _ in predicted if s > 0}
    ref = {s for s, _, _ in gold if s > 0}
    if not pred and not ref:
        return 1.0
    hit = len(pred & ref)
    if hit == 0:
        return 0.0
    precision, recall = hit / len(pred), hit / len(ref)
    return 2 * precision * recall / (precision + recall)


def expected_segment_gap(model: SegModel, examples: list[Example], batch_size: int = 64) -> np.ndarray:
    """``E[segments] - K`` for each example's reference text."""
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i : i + batch_size]
        batch = batch_examples(model.vocab, chunk)
        _, expected = semimarkov_log_z_and_expected_segments(score_tables(model, batch))
        out.append(expected.data - batch.n_records)
    return np.concatenate(out)


def segmentation_f1(model: SegModel, examples: list[Example]) -> float:
    """Mean boundary F1 of the MAP segmentation of the reference text against gold."""
    scores = []
    for ex in examples:
        pots = score_tables(model, batch_examples(model.vocab, [ex])).item(0)
        path, _ = semimarkov_map(pots)
        # the appended end-of-text token is not part of the gold text
        n = len(ex.text) - 1
        predicted = [(s, min(e, n), r) for s, e, r in path.segments() if s < n]
        scores.append(boundary_f1(predicted, ex.gold_segments))
    return float(np.mean(scores))


def evaluate_segmodel(
    model: SegModel,
    examples: list[Example],
    beam: int = 1,
    trigram_blocking: bool = False,
    forbid_punct_segments: bool = False,
) -> dict:
    """Decode every input and report coverage, repetition, faithfulness and exact match."""
    covered = total_records = repeats = exact = faithful = checked = 0
    for ex in examples:
        result = constrained_decode(model, ex.records, beam, trigram_blocking, forbid_punct_segments)
        usage = record_usage(result, ex.records.n_records)
        covered += int(np.sum(usage > 0))
        total_records += ex.records.n_records
        repeats += int(np.sum(np.maximum(usage - 1, 0)))
        exact += int(result.tokens == [int(t) for t in ex.text.tokens[:-1]])
        ok, n = faithful_records(result, ex)
        faithful += ok
        checked += n
    gap = expected_segment_gap(model, examples)
    return {
        "n": len(examples),
        "coverage": covered / total_records,
        "repetitions": repeats,
        "faithfulness": faithful / checked if checked else 1.0,
        "exact_match": exact / len(examples),
        "mean_expected_segments_gap": float(np.mean(np.abs(gap))),
        "mean_expected_segments_offset": float(np.mean(gap)),
    }
