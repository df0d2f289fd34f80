"""Experiment configuration: typed sections loaded from JSON or YAML."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

TASKS = ("segmodel", "vrs", "backtranslation", "estimator-bench", "lattice-check")


class ConfigError(ValueError):
    """The configuration is malformed or refers to missing files."""


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int = 32
    hidden: int = 32
    max_len: int = 6


@dataclass(frozen=True)
class ScheduleConfig:
    anneal_horizon: int = 1000
    free_bits_eps: float = 0.0
    tau_start: float = 1.0
    tau_end: float = 0.5
    tau_steps: int = 1000


@dataclass(frozen=True)
class LatticeConfig:
    max_len: int = 3
    top_k: int = 5
    n_segmental: int = 1000
    n_hmm: int = 1000
    gradients: bool = True


@dataclass(frozen=True)
class RegularizerConfig:
    enabled: bool = True
    eta_offset: float = 0.0
    gamma: float = 1.0


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-2
    epochs: int = 30
    batch_size: int = 32


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 2000
    n_eval: int = 200
    connector_rate: float = 0.3
    train_path: str | None = None
    eval_path: str | None = None


@dataclass(frozen=True)
class EvalConfig:
    beam: int = 3
    trigram_blocking: bool = False
    forbid_punct_segments: bool = False


@dataclass(frozen=True)
class VrsConfig:
    lam: float = 1.0
    eps_fraction: float = 0.15
    alpha: float = 0.35
    pretrain_epochs: int = 1
    selector_dim: int = 16


@dataclass(frozen=True)
class BenchConfig:
    toys: tuple[str, ...] = ("cat3", "cat5", "gauss")
    n_trials: int = 10
    n_samples: int = 10000
    timing: bool = False


@dataclass(frozen=True)
class BacktranslationConfig:
    init_steps: int = 100
    iters: int = 4
    phase_epochs: int = 3
    beam: int = 3
    init_lr: float = 3e-3
    phase_lr: float = 1e-3


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    seed: int
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    vrs: VrsConfig = field(default_factory=VrsConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    backtranslation: BacktranslationConfig = field(default_factory=BacktranslationConfig)
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else dataclasses.replace(self, seed=seed)


_SCALARS = {"int": int, "float": float, "bool": bool, "str": str}


def _coerce(name: str, annotation: str, value):
    if annotation.endswith("| None"):
        if value is None:
            return None
        annotation = annotation[: -len("| None")].strip()
    if annotation.startswith("tuple["):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{name}: expected a list of strings")
        return tuple(value)
    kind = _SCALARS[annotation]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is not bool and isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{name}: expected {annotation}, got {value!r}")
    return value


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{prefix or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in raw.items():
        f = fields[name]
        path = f"{prefix}.{name}" if prefix else name
        section = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(section):
            kwargs[name] = _build(section, value, path)
        else:
            kwargs[name] = _coerce(path, f.type, value)
    return cls(**kwargs)


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed mapping; relative paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at top level")
    for required in ("task", "seed"):
        if required not in raw:
            raise ConfigError(f"config: missing required key {required!r}")
    cfg = _build(ExperimentConfig, raw, "")
    if cfg.task not in TASKS:
        raise ConfigError(f"task: must be one of {list(TASKS)}, got {cfg.task!r}")
    if cfg.seed < 0:
        raise ConfigError("seed: must be >= 0")
    base = base_dir or Path.cwd()

    def resolve(path: str | None, name: str) -> str | None:
        if path is None:
            return None
        full = Path(path) if Path(path).is_absolute() else base / path
        if not full.exists():
            raise ConfigError(f"{name}: path does not exist: {full}")
        return str(full)

    data = dataclasses.replace(
        cfg.data,
        train_path=resolve(cfg.data.train_path, "data.train_path"),
        eval_path=resolve(cfg.data.eval_path, "data.eval_path"),
    )
    checkpoint = cfg.checkpoint
    if checkpoint is not None and not Path(checkpoint + ".json").is_absolute():
        checkpoint = str(base / checkpoint)
    if checkpoint is not None and not Path(checkpoint + ".json").exists():
        raise ConfigError(f"checkpoint: no manifest at {checkpoint}.json")
    return dataclasses.replace(cfg, data=data, checkpoint=checkpoint)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a ``.json``, ``.yaml`` or ``.yml`` file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw, path.parent)
