"""``latentseq`` command-line interface.

Exit codes: 0 success, 1 task error, 2 configuration or usage error.  Errors
are reported on standard error as one JSON object.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
from threadpoolctl import threadpool_limits

from ..segmodel import read_jsonl
from ..segmodel.inspect import format_trace
from . import tasks
from .config import TASKS, ConfigError, ExperimentConfig, config_from_dict, load_config

EXIT_TASK_ERROR, EXIT_CONFIG_ERROR = 1, 2


def _fail(code: int, kind: str, message: str) -> None:
    click.echo(json.dumps({"error": kind, "message": message}, sort_keys=True), err=True)
    sys.exit(code)


def guarded(fn):
    """Map configuration problems to exit 2 and task failures to exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, threads: int, **kwargs):
        try:
            with threadpool_limits(limits=threads):
                return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG_ERROR, "config", str(exc))
        except (ValueError, RuntimeError, ArithmeticError, OSError, KeyError) as exc:
            _fail(EXIT_TASK_ERROR, type(exc).__name__, str(exc))

    return wrapper


def common_options(fn):
    fn = click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
                      help="Upper bound on BLAS/OpenMP worker threads.")(fn)
    fn = click.option("--json", "as_json", is_flag=True, help="Machine-readable output on stdout.")(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default="runs", show_default=True,
                      help="Output directory (created if missing).")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=None, help="Overrides the config seed.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="JSON or YAML experiment config.")(fn)
    return fn


def resolve_config(config_path: str | None, seed: int | None, default_task: str | None = None) -> ExperimentConfig:
    """Load the config (or build a default one for ``default_task``) and apply the seed override."""
    if config_path is not None:
        return load_config(config_path).with_seed(seed)
    if default_task is None:
        raise ConfigError("--config is required for this command")
    if seed is None:
        raise ConfigError("a seed is mandatory: pass --seed or a config with 'seed'")
    return config_from_dict({"task": default_task, "seed": seed})


def _outdir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(payload: dict, as_json: bool, text: str) -> None:
    click.echo(json.dumps(payload, sort_keys=True) if as_json else text)


@click.group()
@click.version_option(package_name="artifact", message="%(version)s")
def cli() -> None:
    """Latent-variable sequence models: training, evaluation and diagnostics."""


@cli.command("synth-data")
@common_options
@click.option("--n", "n", type=int, default=100, show_default=True, help="Number of examples.")
@click.option("--connector-rate", type=float, default=0.3, show_default=True)
@guarded
def synth_data_cmd(config_path, seed, out, as_json, n, connector_rate):
    """Write a synthetic records-to-text corpus as JSONL."""
    if config_path is not None:
        cfg = load_config(config_path).with_seed(seed)
        seed, n, connector_rate = cfg.seed, cfg.data.n_train, cfg.data.connector_rate
    if seed is None:
        raise ConfigError("a seed is mandatory: pass --seed or a config with 'seed'")
    if n < 1:
        raise ConfigError("--n must be >= 1")
    if not 0.0 <= connector_rate <= 1.0:
        raise ConfigError("--connector-rate must lie in [0, 1]")
    summary = tasks.synth_corpus(seed, n, connector_rate, _outdir(out) / "synth.jsonl")
    _emit(summary, as_json, f"wrote {summary['n']} examples to {summary['path']}")


@cli.command()
@common_options
@guarded
def train(config_path, seed, out, as_json):
    """Run the task named in the config and write metrics, checkpoints and a manifest."""
    cfg = resolve_config(config_path, seed)
    outdir = _outdir(out)
    if cfg.task == "lattice-check":
        payload = tasks.run_lattice_check(cfg, outdir)
        artifacts = ["lattice_check.json"]
    else:
        artifacts = tasks.TRAINERS[cfg.task](cfg, outdir)
        payload = {"task": cfg.task, "artifacts": artifacts}
    tasks.write_manifest(outdir, "train", cfg.to_dict(), artifacts)
    _emit(payload, as_json, f"{cfg.task}: wrote {', '.join(artifacts)} to {outdir}")


@cli.command("eval")
@common_options
@click.option("--checkpoint", type=str, default=None, help="Checkpoint stem (without .json/.bin).")
@guarded
def eval_cmd(config_path, seed, out, as_json, checkpoint):
    """Evaluate a trained segmental model on the configured held-out split."""
    cfg = resolve_config(config_path, seed, default_task="segmodel")
    stem = checkpoint or cfg.checkpoint
    if stem is None:
        raise ConfigError("no checkpoint: pass --checkpoint or set 'checkpoint' in the config")
    if not Path(stem + ".json").exists():
        raise ConfigError(f"no checkpoint manifest at {stem}.json")
    outdir = _outdir(out)
    tasks.run_eval(cfg, outdir, stem)
    metrics = json.loads((outdir / "eval.json").read_text())
    tasks.write_manifest(outdir, "eval", cfg.to_dict(), ["eval.json"])
    _emit(metrics, as_json, "\n".join(f"{k:>32}: {v}" for k, v in sorted(metrics.items())))


@cli.command()
@common_options
@guarded
def bench(config_path, seed, out, as_json):
    """Estimator bench on the shipped toys; writes bench.csv."""
    cfg = resolve_config(config_path, seed, default_task="estimator-bench")
    outdir = _outdir(out)
    artifacts = tasks.run_bench(cfg, outdir)
    tasks.write_manifest(outdir, "bench", cfg.to_dict(), artifacts)
    text = (outdir / "bench.csv").read_text()
    _emit({"artifacts": artifacts, "csv": text}, as_json, text.rstrip())


@cli.command("lattice-check")
@common_options
@guarded
def lattice_check(config_path, seed, out, as_json):
    """Compare every dynamic program with brute-force enumeration; prints max deviations."""
    cfg = resolve_config(config_path, seed, default_task="lattice-check")
    outdir = _outdir(out)
    deviations = tasks.run_lattice_check(cfg, outdir)
    tasks.write_manifest(outdir, "lattice-check", cfg.to_dict(), ["lattice_check.json"])
    _emit(deviations, as_json, "\n".join(f"{k:>20}: {v:.3e}" for k, v in sorted(deviations.items())))


@cli.command()
@click.option("--checkpoint", required=True, type=str, help="Checkpoint stem (without .json/.bin).")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSONL lines with 'records' (and optionally 'text'/'gold_segments').")
@click.option("--beam", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output on stdout.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True)
@guarded
def align(checkpoint, input_path, beam, as_json):
    """Decode inputs and show each segment's record with per-token copy/generate posteriors."""
    if not Path(checkpoint + ".json").exists():
        raise ConfigError(f"no checkpoint manifest at {checkpoint}.json")
    report = tasks.align_corpus(checkpoint, read_jsonl(input_path), beam)
    text = "\n\n".join(format_trace(t) for t in report["inputs"])
    if "segmentation_f1" in report:
        text += f"\n\nsegment-boundary F1 vs gold: {report['segmentation_f1']:.4f}"
    _emit(report, as_json, text)


def main() -> None:
    cli(prog_name="latentseq")


__all__ = ["TASKS", "cli", "main"]
