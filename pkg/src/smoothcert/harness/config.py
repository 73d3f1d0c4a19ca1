"""Run configuration: nested dataclasses loaded strictly from YAML."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union, get_args, get_origin, get_type_hints

import yaml

from ..corruption import CorruptionSpec
from ..model import ModelConfig
from ..numerics import ConfidenceParams
from ..objectives import ConsistencyHparams

MODES = ("pretrain", "finetune", "probe", "certify", "report")


class ConfigError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    kind: str = "adamw"
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    epochs: int = 10
    batch_size: int = 64
    warmup_epochs: float = 1.0
    layerwise_decay: float = 1.0


# Betas follow the pre-training (0.9/0.95) and fine-tuning (0.9/0.999) recipes.
OPTIMIZER_DEFAULTS = {
    "pretrain": dict(base_lr=1.5e-3, beta2=0.95, epochs=100, warmup_epochs=10),
    "finetune": dict(base_lr=1e-3, beta2=0.999, epochs=30, warmup_epochs=3, layerwise_decay=0.75),
    "probe": dict(base_lr=1e-2, beta2=0.999, weight_decay=0.0, epochs=30, warmup_epochs=1),
}


@dataclass
class CorruptionConfig:
    sigma: float = 0.25
    mask_ratio: float = 0.75


@dataclass
class ObjectiveConfig:
    kind: str = "consistency"  # or "rs"
    lam: float = 2.0
    mu: float = 0.5
    m: int = 2
    sigma: float = 0.25
    sigma_range: Optional[list] = None  # [lo, hi]: draw sigma uniformly per example

    def hparams(self) -> ConsistencyHparams:
        sigma = tuple(self.sigma_range) if self.sigma_range is not None else self.sigma
        if self.kind == "rs":
            return ConsistencyHparams(lam=0.0, mu=0.0, m=1, sigma=sigma)
        return ConsistencyHparams(lam=self.lam, mu=self.mu, m=self.m, sigma=sigma)


@dataclass
class DataConfig:
    train: Optional[str] = None
    test: Optional[str] = None


@dataclass
class CheckpointConfig:
    init_from: Optional[str] = None
    resume: bool = False  # restore optimizer state and epoch counter from init_from
    from_scratch: bool = False  # fine-tune without a pre-trained encoder
    out_dir: str = "runs"
    keep_every: int = 0  # also keep epoch-numbered checkpoints every N epochs


@dataclass
class CertifyConfig:
    sigma: float = 0.25
    n0: int = 100
    n: int = 10_000
    alpha: float = 0.001
    batch: int = 1000
    stride: int = 1
    max_examples: int = -1  # -1: no limit
    workers: int = 1
    output: str = "certify.tsv"

    def confidence(self) -> ConfidenceParams:
        return ConfidenceParams(alpha=self.alpha, n0=self.n0, n=self.n)


@dataclass
class ReportInput:
    path: str
    sigma: float


@dataclass
class ReportConfig:
    inputs: list = field(default_factory=list)  # list of ReportInput
    radii: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    output: str = "report"


@dataclass
class RunConfig:
    mode: str = "pretrain"
    seed: int = 0
    hflip: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    checkpoint: CheckpointConfig = field(default_factory=CheckpointConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    @property
    def corruption_spec(self) -> CorruptionSpec:
        return CorruptionSpec(self.corruption.sigma, self.corruption.mask_ratio, self.model.patch_size)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        opt = self.optimizer
        if opt.kind != "adamw":
            raise ConfigError(f"only the adamw optimizer is supported, got {opt.kind!r}")
        if not 0 < opt.layerwise_decay <= 1:
            raise ConfigError(f"layerwise_decay must lie in (0, 1], got {opt.layerwise_decay}")
        if opt.batch_size < 1 or opt.epochs < 0 or opt.warmup_epochs < 0 or opt.base_lr < 0:
            raise ConfigError("optimizer sizes and rates must be nonnegative (batch_size >= 1)")
        if self.objective.kind not in ("consistency", "rs"):
            raise ConfigError(f"objective.kind must be consistency or rs, got {self.objective.kind!r}")
        try:
            self.objective.hparams()
            self.corruption_spec
            if self.mode == "certify":
                self.certify.confidence()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        need = {
            "pretrain": ["data.train"],
            "finetune": ["data.train"],
            "probe": ["data.train", "checkpoint.init_from"],
            "certify": ["data.test", "checkpoint.init_from"],
            "report": [],
        }[self.mode]
        for dotted in need:
            section, key = dotted.split(".")
            if getattr(getattr(self, section), key) in (None, ""):
                raise ConfigError(f"mode {self.mode} requires {dotted}")
        if self.mode == "finetune" and not (self.checkpoint.init_from or self.checkpoint.from_scratch):
            raise ConfigError("finetune requires checkpoint.init_from or checkpoint.from_scratch: true")
        if self.mode == "report" and not self.report.inputs:
            raise ConfigError("report requires report.inputs")
        if self.certify.stride < 1 or self.certify.workers < 1 or self.certify.batch < 1:
            raise ConfigError("certify stride, workers and batch must be >= 1")
        return self


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}" if where else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _coerce(tp, value, where):
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if where.endswith("report.inputs"):
            return [_build(ReportInput, v, f"{where}[{i}]") for i, v in enumerate(value)]
        return list(value)
    return value


def config_from_dict(data: dict, mode: str | None = None, validate: bool = True) -> RunConfig:
    data = dict(data or {})
    if mode is not None:
        if data.get("mode", mode) != mode:
            raise ConfigError(f"config says mode {data['mode']!r} but {mode!r} was requested")
        data["mode"] = mode
    m = data.get("mode", "pretrain")
    opt = dict(OPTIMIZER_DEFAULTS.get(m, {}))
    if isinstance(data.get("optimizer"), dict):
        opt.update(data["optimizer"])
    data["optimizer"] = opt
    cfg = _build(RunConfig, data, "")
    return cfg.validate() if validate else cfg


def load_config(path, mode: str | None = None, validate: bool = True) -> RunConfig:
    """Parse a YAML run config; ``validate=False`` defers the checks until overrides are applied."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data or {}, mode, validate)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
