"""Variational record selection: a Bernoulli selector over source tokens trained by REINFORCE."""

from __future__ import annotations

import numpy as np

from .. import ndgrad as nd
from ..dists import PROB_FLOOR
from ..estimators import cmi_objective
from ..ndgrad import Adam, Params, Value
from ..segmodel.data import Example
from ..segmodel.model import Batch, SegModel, batch_examples, vrs_loglik

MAX_REDRAWS = 10


class EmptySelectionError(RuntimeError):
    """A sampled mask kept selecting nothing."""


class VrsSelector:
    """Proposal ``q_phi(beta | X)`` (per-token logistic) and the learned prior rate ``gamma``."""

    def __init__(self, vocab_size: int, emb_dim: int = 16, seed: int = 0, prior_rate: float = 0.5):
        rng = np.random.default_rng(seed)
        self.params = Params()
        self.params.add("sel.emb", 0.1 * rng.standard_normal((vocab_size, emb_dim)))
        self.params.add("sel.w", 0.1 * rng.standard_normal(emb_dim))
        self.params.add("sel.b", np.asarray(0.0))
        self.params.add("prior.logit", np.asarray(np.log(prior_rate) - np.log1p(-prior_rate)))

    def probs(self, src: np.ndarray) -> Value:
        P = self.params
        logits = nd.matmul(P["sel.emb"][src], P["sel.w"]) + P["sel.b"]
        return nd.clip(nd.sigmoid(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)

    def prior_probs(self, shape) -> Value:
        rate = nd.clip(nd.sigmoid(self.params["prior.logit"]), PROB_FLOOR, 1.0 - PROB_FLOOR)
        return nd.broadcast_to(rate, shape)


def valid_positions(batch: Batch) -> np.ndarray:
    return np.arange(batch.src.shape[1])[None, :] < batch.n_src[:, None]


def overlap_labels(batch: Batch) -> np.ndarray:
    """Distant supervision: a source token is selected when it also occurs in the target."""
    labels = np.zeros(batch.src.shape)
    for b in range(batch.size):
        target = set(batch.tgt[b, : batch.lengths[b]].tolist())
        labels[b, : batch.n_src[b]] = [tok in target for tok in batch.src[b, : batch.n_src[b]]]
        if not labels[b].any():
            labels[b, : batch.n_src[b]] = 1.0
    return labels


def _bernoulli_terms(p: Value, mask: np.ndarray, valid: np.ndarray) -> Value:
    """``sum_i valid_i [m_i log p_i + (1 - m_i) log(1 - p_i)]`` per row."""
    per_token = mask * nd.log(p) + (1.0 - mask) * nd.log(1.0 - p)
    return nd.vsum(per_token * valid.astype(np.float64), axis=-1)


def _masked_kl(q: Value, prior: Value, valid: np.ndarray) -> Value:
    on = q * (nd.log(q) - nd.log(prior))
    off = (1.0 - q) * (nd.log(1.0 - q) - nd.log(1.0 - prior))
    return nd.vsum((on + off) * valid.astype(np.float64), axis=-1)


def sample_masks(probs: np.ndarray, valid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli masks with every row non-empty; empty rows are redrawn up to ``MAX_REDRAWS`` times."""
    masks = ((rng.random(probs.shape) < probs) & valid).astype(np.float64)
    for _ in range(MAX_REDRAWS):
        empty = ~masks.any(axis=1)
        if not empty.any():
            return masks
        redraw = (rng.random(probs.shape) < probs) & valid
        masks[empty] = redraw[empty]
    if (~masks.any(axis=1)).any():
        raise EmptySelectionError(f"selection stayed empty after {MAX_REDRAWS} redraws")
    return masks


def vrs_train_step(
    model: SegModel,
    selector: VrsSelector,
    batch: Batch,
    eps,
    lam: float,
    *,
    rng: np.random.Generator,
    optimizer: Adam,
    pretrain: bool = False,
) -> dict:
    """One update of the generator ``theta``, selector ``phi`` and prior ``gamma``.

    Generator and prior get pathwise gradients; the selector gets the
    score-function gradient with the soft-select likelihood (the generator
    evaluated at the mean mask) as its baseline, plus the pathwise gradient
    of the KL terms.  In ``pretrain`` mode the selector instead fits
    token-overlap pseudo labels and the generator trains on those masks.
    ``optimizer`` must cover both parameter sets.
    """
    valid = valid_positions(batch)
    probs = selector.probs(batch.src)
    optimizer.params.zero_grad()
    if pretrain:
        labels = overlap_labels(batch)
        loglik = vrs_loglik(model, batch, labels)
        fit = _bernoulli_terms(probs, labels, valid)
        loss = nd.mean(-loglik - fit)
        nd.backward(loss)
        optimizer.step()
        return {"loglik": float(loglik.data.mean()), "kl": float("nan"), "objective": float(-loss.data),
                "select_rate": float(labels[valid].mean())}

    masks = sample_masks(probs.data, valid, rng)
    loglik = vrs_loglik(model, batch, masks)
    baseline = vrs_loglik(model, batch, probs.data).data
    log_q = _bernoulli_terms(probs, masks, valid)
    kl = _masked_kl(probs, selector.prior_probs(probs.shape), valid)
    objective = cmi_objective(loglik - kl, kl, eps, lam)
    advantage = loglik.data - baseline
    surrogate = objective + advantage * log_q
    nd.backward(nd.mean(-surrogate))
    optimizer.step()
    return {
        "loglik": float(loglik.data.mean()),
        "kl": float(kl.data.mean()),
        "objective": float(objective.data.mean()),
        "select_rate": float(masks[valid].mean()),
    }


def vrs_train(
    model: SegModel,
    selector: VrsSelector,
    examples: list[Example],
    epochs: int = 2,
    pretrain_epochs: int = 1,
    batch_size: int = 32,
    eps_fraction: float = 0.15,
    lam: float = 1.0,
    lr: float = 1e-2,
    seed: int = 0,
) -> list[dict]:
    """Warm start with distant supervision, then train the full objective; one summary per epoch."""
    rng = np.random.default_rng(seed)
    optimizer = Adam(Params.join(model.params, selector.params), lr=lr)
    history = []
    for epoch in range(pretrain_epochs + epochs):
        pretrain = epoch < pretrain_epochs
        stats = []
        for start in rng.permutation(np.arange(0, len(examples), batch_size)):
            batch = batch_examples(model.vocab, examples[start : start + batch_size])
            eps = eps_fraction * batch.n_src.astype(np.float64)
            stats.append(vrs_train_step(model, selector, batch, eps, lam, rng=rng, optimizer=optimizer, pretrain=pretrain))
        summary = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
        summary.update(epoch=epoch + 1, pretrain=pretrain)
        history.append(summary)
    return history
