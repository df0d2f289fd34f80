"""Minibatch training for the segmental model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..ndgrad import Adam, backward
from ..segmodel.data import Example
from ..segmodel.model import SegModel, batch_examples, train_loss


def length_buckets(examples: list[Example], batch_size: int) -> list[list[int]]:
    """Index batches of similar text length (stable sort, so deterministic)."""
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i].text), i))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def fit_segmodel(
    model: SegModel,
    examples: list[Example],
    epochs: int = 10,
    batch_size: int = 32,
    lr: float = 1e-2,
    seed: int = 0,
    eta_offset: float = 0.0,
    gamma: float = 1.0,
    regularize: bool = True,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Train with Adam on length-bucketed batches; returns one summary per epoch.

    ``eta`` is each example's record count plus ``eta_offset``.
    """
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr=lr)
    buckets = length_buckets(examples, batch_size)
    history = []
    for epoch in range(epochs):
        total_loss = total_nll = total_tokens = gap = 0.0
        for b in rng.permutation(len(buckets)):
            batch = batch_examples(model.vocab, [examples[i] for i in buckets[b]])
            model.params.zero_grad()
            loss, stats = train_loss(model, batch, batch.n_records + eta_offset, gamma, regularize)
            backward(loss)
            opt.step()
            total_loss += float(loss.data) * batch.size
            total_nll += stats["nll"]
            total_tokens += stats["tokens"]
            gap += float(np.abs(stats["expected_segments"] - batch.n_records).sum())
        summary = {
            "epoch": epoch + 1,
            "loss": total_loss / len(examples),
            "nll_per_token": total_nll / total_tokens,
            "mean_expected_segments_gap": gap / len(examples),
        }
        history.append(summary)
        if on_epoch is not None:
            on_epoch(summary)
    return history
