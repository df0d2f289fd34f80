"""Task implementations behind the command-line entry point.

Every task writes its metrics into an output directory next to a run
manifest; metrics files contain no timestamps so that a (config, seed) pair
reproduces them byte for byte.
"""

from __future__ import annotations

import json
import subprocess
from pathlib import Path

import numpy as np

from .. import __version__
from ..estimators import SHIPPED_TOYS, estimator_bench, write_bench_csv
from ..lattice import equivalence_suite
from ..segmodel import (
    SegModel,
    SegModelConfig,
    constrained_decode,
    corpus_vocab,
    evaluate_segmodel,
    load_model,
    read_jsonl,
    save_model,
    segmentation_f1,
    synth_data,
    to_example,
    write_jsonl,
)
from ..segmodel.inspect import alignment_trace
from ..trainers import VrsSelector, bt_init, bt_train, build_state, evaluate_state, fit_segmodel, vrs_train
from ..trainers.backtranslation import Seq2SeqConfig, TransductionTask, make_toy_data
from .config import ExperimentConfig


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_jsonl_records(records: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_manifest(out: Path, command: str, config: dict, artifacts: list[str]) -> None:
    write_json(
        {"command": command, "version": version_string(), "config": config, "artifacts": sorted(artifacts)},
        out / "manifest.json",
    )


def _corpus(cfg: ExperimentConfig, split: str) -> list[dict]:
    path = cfg.data.train_path if split == "train" else cfg.data.eval_path
    if path is not None:
        return read_jsonl(path)
    n = cfg.data.n_train if split == "train" else cfg.data.n_eval
    # the evaluation split uses the next seed so it never overlaps training draws
    return synth_data(cfg.seed + (0 if split == "train" else 1), n, cfg.data.connector_rate)


def _examples(cfg: ExperimentConfig, split: str, vocab):
    return [to_example(row, vocab) for row in _corpus(cfg, split)]


def _new_segmodel(cfg: ExperimentConfig, vocab) -> SegModel:
    m = cfg.model
    return SegModel(SegModelConfig(len(vocab), m.emb_dim, m.hidden, m.max_len, cfg.seed), vocab)


def run_segmodel(cfg: ExperimentConfig, out: Path) -> list[str]:
    vocab = corpus_vocab()
    train, held_out = _examples(cfg, "train", vocab), _examples(cfg, "eval", vocab)
    model = _new_segmodel(cfg, vocab)
    history = fit_segmodel(
        model, train, epochs=cfg.optimizer.epochs, batch_size=cfg.optimizer.batch_size, lr=cfg.optimizer.lr,
        seed=cfg.seed, eta_offset=cfg.regularizer.eta_offset, gamma=cfg.regularizer.gamma,
        regularize=cfg.regularizer.enabled,
    )
    write_jsonl_records(history, out / "metrics.jsonl")
    save_model(model, out / "model")
    write_json(_evaluate(model, held_out, cfg), out / "eval.json")
    return ["metrics.jsonl", "model.bin", "model.json", "eval.json"]


def _evaluate(model: SegModel, examples, cfg: ExperimentConfig) -> dict:
    e = cfg.eval
    metrics = evaluate_segmodel(model, examples, e.beam, e.trigram_blocking, e.forbid_punct_segments)
    if all(ex.gold_segments for ex in examples):
        metrics["segmentation_f1"] = segmentation_f1(model, examples)
    return metrics


def run_eval(cfg: ExperimentConfig, out: Path, checkpoint: str) -> list[str]:
    model = load_model(checkpoint)
    write_json(_evaluate(model, _examples(cfg, "eval", model.vocab), cfg), out / "eval.json")
    return ["eval.json"]


def run_vrs(cfg: ExperimentConfig, out: Path) -> list[str]:
    vocab = corpus_vocab()
    model = _new_segmodel(cfg, vocab)
    selector = VrsSelector(len(vocab), cfg.vrs.selector_dim, seed=cfg.seed)
    history = vrs_train(
        model, selector, _examples(cfg, "train", vocab), epochs=cfg.optimizer.epochs,
        pretrain_epochs=cfg.vrs.pretrain_epochs, batch_size=cfg.optimizer.batch_size,
        eps_fraction=cfg.vrs.eps_fraction, lam=cfg.vrs.lam, lr=cfg.optimizer.lr, seed=cfg.seed,
    )
    write_jsonl_records(history, out / "metrics.jsonl")
    return ["metrics.jsonl"]


def run_backtranslation(cfg: ExperimentConfig, out: Path) -> list[str]:
    b = cfg.backtranslation
    data = make_toy_data(TransductionTask.create(cfg.seed), cfg.seed)
    state = build_state(
        data, Seq2SeqConfig(seed=cfg.seed), init_lr=b.init_lr, phase_lr=b.phase_lr,
        beam=b.beam, phase_epochs=b.phase_epochs,
    )
    bt_init(state, b.init_steps)
    baseline = evaluate_state(state)
    _, history = bt_train(state, b.iters)
    write_jsonl_records([baseline] + history, out / "metrics.jsonl")
    return ["metrics.jsonl"]


def run_bench(cfg: ExperimentConfig, out: Path) -> list[str]:
    unknown = sorted(set(cfg.bench.toys) - set(SHIPPED_TOYS))
    if unknown:
        raise ValueError(f"unknown toys {unknown}; shipped: {sorted(SHIPPED_TOYS)}")
    rows = []
    for k, name in enumerate(cfg.bench.toys):
        rows.extend(
            estimator_bench(SHIPPED_TOYS[name], n_trials=cfg.bench.n_trials, n_samples=cfg.bench.n_samples, seed=cfg.seed + k)
        )
    write_bench_csv(rows, out / "bench.csv", timing=cfg.bench.timing)
    return ["bench.csv"]


def run_lattice_check(cfg: ExperimentConfig, out: Path) -> dict:
    lat = cfg.lattice
    deviations = equivalence_suite(
        cfg.seed, lat.n_segmental, lat.n_hmm, max_len=lat.max_len, gradients=lat.gradients
    )
    write_json(deviations, out / "lattice_check.json")
    return deviations


def align_corpus(checkpoint: str, rows: list[dict], beam: int = 3) -> dict:
    """Decode each input's records and attribute every token; adds boundary F1 when gold exists."""
    model = load_model(checkpoint)
    examples = [to_example({**r, "text": r.get("text", [])}, model.vocab) for r in rows]
    traces = []
    for ex in examples:
        result = constrained_decode(model, ex.records, beam=beam)
        traces.append(alignment_trace(model, ex.records, result))
    report = {"inputs": traces}
    if examples and all("text" in r and r.get("gold_segments") for r in rows):
        report["segmentation_f1"] = segmentation_f1(model, examples)
    return report


def synth_corpus(seed: int, n: int, connector_rate: float, path: Path) -> dict:
    rows = synth_data(seed, n, connector_rate)
    write_jsonl(rows, path)
    return {"n": len(rows), "path": str(path), "mean_records": float(np.mean([len(r["records"]) for r in rows]))}


TRAINERS = {
    "segmodel": run_segmodel,
    "vrs": run_vrs,
    "backtranslation": run_backtranslation,
    "estimator-bench": run_bench,
}
