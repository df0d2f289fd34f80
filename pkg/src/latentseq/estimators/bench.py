"""Bias/variance comparison of gradient estimators on toys with exact gradients."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from ..dists import gumbel_noise
from .gradients import EstimatorReport, MovingAverageBaseline, combine_reports, pathwise_grad, score_function_grad
from .toys import CategoricalToy, GaussianToy

CSV_COLUMNS = ("estimator", "bias", "mean_var", "n_samples", "wall_time_s")


class MissingOracleError(ValueError):
    """The objective offers no exact gradient to compare against."""


# An estimator runner draws n samples for one trial: (toy, rng, n, state) -> report.
Runner = Callable[[object, np.random.Generator, int, dict], EstimatorReport]


def _reinforce(baseline_kind: str) -> Runner:
    def run(toy, rng, n, state):
        if baseline_kind == "none":
            baseline = 0.0
        elif baseline_kind == "soft-select":
            baseline = toy.soft_select_baseline
        elif baseline_kind == "exact":
            baseline = toy.exact_optimal_baseline
        elif baseline_kind == "moving-average":
            baseline = state.setdefault("moving_average", MovingAverageBaseline(0.95))
        else:
            raise ValueError(f"unknown baseline {baseline_kind!r}")
        return score_function_grad(toy.logq, toy.reward, baseline, n, theta=toy.theta, sample=toy.sample, rng=rng)

    return run


def _gumbel(tau: float, hard: bool) -> Runner:
    def run(toy, rng, n, state):
        if not isinstance(toy, CategoricalToy):
            raise TypeError("Gumbel estimators need a categorical toy")
        return pathwise_grad(toy.gumbel_objective(tau, hard), n, theta=toy.theta, rng=rng)

    return run


def _reparam(toy, rng, n, state):
    if not isinstance(toy, GaussianToy):
        raise TypeError("the reparameterization estimator needs a Gaussian toy")
    return pathwise_grad(toy.reparam_objective(), n, theta=toy.theta, rng=rng)


# name -> (runner, declared unbiased)
ESTIMATORS: dict[str, tuple[Runner, bool]] = {
    "reinforce": (_reinforce("none"), True),
    "reinforce-soft-select": (_reinforce("soft-select"), True),
    "reinforce-exact-baseline": (_reinforce("exact"), True),
    "reinforce-moving-average": (_reinforce("moving-average"), True),
    "gumbel-softmax-tau1": (_gumbel(1.0, hard=False), False),
    "straight-through-gumbel-tau1": (_gumbel(1.0, hard=True), False),
    "reparam": (_reparam, True),
}
CATEGORICAL_ESTIMATORS = (
    "reinforce",
    "reinforce-soft-select",
    "reinforce-exact-baseline",
    "reinforce-moving-average",
    "gumbel-softmax-tau1",
    "straight-through-gumbel-tau1",
)
GAUSSIAN_ESTIMATORS = ("reinforce", "reinforce-soft-select", "reparam")


@dataclass
class BenchRow:
    toy: str
    estimator: str
    report: EstimatorReport
    exact: np.ndarray
    unbiased: bool

    @property
    def bias(self) -> float:
        return float(np.max(np.abs(self.report.grad_mean - self.exact)))

    @property
    def mean_var(self) -> float:
        return float(np.mean(self.report.grad_var))

    @property
    def max_z(self) -> float:
        return float(np.max(self.report.z_scores(self.exact)))

    @property
    def within_3se(self) -> bool:
        return self.max_z <= 3.0


def estimator_bench(
    objective,
    estimators: list[str] | None = None,
    n_trials: int = 10,
    n_samples: int = 10_000,
    seed: int = 0,
) -> list[BenchRow]:
    """Run each estimator for ``n_trials`` x ``n_samples`` draws and compare to the exact gradient.

    Trial ``t`` uses the same random stream for every estimator, so two
    estimators that consume randomness the same way see identical draws.
    """
    exact_fn = getattr(objective, "exact_grad", None)
    if exact_fn is None:
        raise MissingOracleError(f"{type(objective).__name__} has no exact_grad oracle")
    exact = np.asarray(exact_fn(), dtype=np.float64)
    if estimators is None:
        estimators = list(GAUSSIAN_ESTIMATORS if isinstance(objective, GaussianToy) else CATEGORICAL_ESTIMATORS)
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(n_trials)
    rows = []
    for name in estimators:
        if name not in ESTIMATORS:
            raise KeyError(f"unknown estimator {name!r}; known: {sorted(ESTIMATORS)}")
        runner, unbiased = ESTIMATORS[name]
        state: dict = {}
        reports = [runner(objective, np.random.default_rng(s), n_samples, state) for s in seeds]
        rows.append(BenchRow(getattr(objective, "name", "toy"), name, combine_reports(reports), exact, unbiased))
    return rows


def write_bench_csv(rows: list[BenchRow], path: str | Path, timing: bool = False) -> None:
    """CSV with one line per (toy, estimator).

    Wall time is machine-dependent, so it is written as ``nan`` unless
    ``timing`` is set; that keeps the file byte-identical across runs.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            wall = row.report.wall_time if timing else math.nan
            writer.writerow([f"{row.toy}/{row.estimator}", repr(row.bias), repr(row.mean_var), row.report.n_samples, repr(wall)])


def read_bench_csv(path: str | Path) -> list[dict]:
    """Parse and type-check a bench CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        out = []
        for rec in reader:
            out.append(
                {
                    "estimator": rec["estimator"],
                    "bias": float(rec["bias"]),
                    "mean_var": float(rec["mean_var"]),
                    "n_samples": int(rec["n_samples"]),
                    "wall_time_s": float(rec["wall_time_s"]),
                }
            )
        return out


def gumbel_argmax_pvalue(logits, n: int, rng: np.random.Generator) -> float:
    """Chi-square p-value of Gumbel-max argmax counts against ``softmax(logits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    draws = np.argmax(np.log(p) + gumbel_noise(rng.random((n, len(p)))), axis=1)
    counts = np.bincount(draws, minlength=len(p))
    return float(stats.chisquare(counts, n * p).pvalue)
