"""Experiment configuration: parsing, validation and the resolved JSON form."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError, ParameterError
from .objectives import VARIANTS, Temperatures, Variant
from .schedules import ScheduleConfig

TASKS = ("two_moons", "blobs", "csv")


@dataclass(frozen=True)
class DataConfig:
    task: str = "two_moons"
    # two moons
    n: int = 400
    noise_sd: float = 0.1
    rotation_deg: float = 40.0
    translation: tuple[float, float] = (0.0, 0.0)
    # blobs
    num_classes: int = 3
    n_per_class: int = 100
    dim: int = 2
    mean_shift: float = 1.0
    cov_scale: float = 1.0
    separation: float = 4.0
    # csv
    source_paths: tuple[str, ...] = ()
    target_path: str | None = None
    test_path: str | None = None
    standardize: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"data.task must be one of {TASKS}, got {self.task!r}")
        if self.task == "csv" and (not self.source_paths or not self.target_path):
            raise ConfigError("csv task needs data.source_paths and data.target_path")
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "source_paths", tuple(self.source_paths))


@dataclass(frozen=True)
class ModelConfig:
    extractor_dims: tuple[int, ...] = (32, 32)
    classifier_hidden: int | None = 16

    def __post_init__(self):
        dims = tuple(int(v) for v in self.extractor_dims)
        if not dims or min(dims) < 1:
            raise ConfigError("model.extractor_dims needs at least one positive width")
        object.__setattr__(self, "extractor_dims", dims)
        if self.classifier_hidden is not None and self.classifier_hidden < 0:
            raise ConfigError("model.classifier_hidden must be non-negative")


@dataclass(frozen=True)
class LossConfig:
    variant: str = "full"
    flags: dict[str, bool] = field(default_factory=dict)
    temperatures: dict[str, float] = field(default_factory=dict)
    alpha: float = 0.7
    lambda_override: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; known: {sorted(VARIANTS)}")
        known = {f.name for f in fields(Variant)}
        bad = set(self.flags) - known
        if bad:
            raise ConfigError(f"unknown loss.flags keys: {sorted(bad)}")
        tknown = {f.name for f in fields(Temperatures)}
        bad = set(self.temperatures) - tknown
        if bad:
            raise ConfigError(f"unknown loss.temperatures keys: {sorted(bad)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("loss.alpha must lie in [0, 1]")
        if self.lambda_override is not None and not 0.0 <= self.lambda_override <= 1.0:
            raise ConfigError("loss.lambda_override must lie in [0, 1]")
        try:
            self.temps()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        self.resolved_variant()

    def resolved_variant(self) -> Variant:
        return replace(VARIANTS[self.variant], **self.flags).validate()

    def temps(self) -> Temperatures:
        return Temperatures(**self.temperatures)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    trials: int = 1
    out_dir: str = "runs/latest"
    kmeans_rounds: int = 3
    kmeans_round_epochs: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("run.trials must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    run: RunConfig = field(default_factory=RunConfig)
    version: int = 1

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["data"]["translation"] = list(self.data.translation)
        out["data"]["source_paths"] = list(self.data.source_paths)
        out["model"]["extractor_dims"] = list(self.model.extractor_dims)
        return out

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))

    def with_variant(self, variant: str, **flags) -> "ExperimentConfig":
        return replace(self, loss=replace(self.loss, variant=variant, flags=dict(flags)))

    def updated(self, section: str, **values) -> "ExperimentConfig":
        return replace(self, **{section: replace(getattr(self, section), **values)})


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "schedule": ScheduleConfig,
             "loss": LossConfig, "run": RunConfig}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except ParameterError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - set(_SECTIONS) - {"version"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if raw.get("version", 1) != 1:
        raise ConfigError(f"unsupported config version {raw.get('version')!r}")
    sections = {name: _build(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    return ExperimentConfig(**sections)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
