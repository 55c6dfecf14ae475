"""Run configuration: flat `section.key=value` text, trivially diffable.

Example:

    run.seed=7
    model.d_model=64
    model.backbone_channels=16,32,64
    optimizer.eta_base=0.001
    loss.lambda_l1=5

Unknown keys are rejected so typos fail loudly. CLI flags may override
individual entries with the same dotted syntax.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .errors import ConfigurationError
from .model import ModelConfig
from .optim import LossConfig, OptimizerConfig


@dataclass
class TrainSettings:
    batch_size: int = 8
    steps_per_epoch: int = 10
    center_jitter: float = 0.3  # search-crop anchor jitter, fraction of box size
    scale_jitter: float = 0.25
    optimizer_mode: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ConfigurationError("batch_size and steps_per_epoch must be >= 1")
        if self.optimizer_mode not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer_mode must be adam or sgd, got {self.optimizer_mode!r}")


@dataclass
class RunSettings:
    seed: int = 0
    max_range: float = 10.0  # depth normalization ceiling, meters
    transfer_scope: str = "full"  # or "backbone"
    sr_display: float = 0.5
    tracker_name: str = "TIR-D"

    def __post_init__(self):
        if self.transfer_scope not in ("full", "backbone"):
            raise ConfigurationError(f"transfer_scope must be full or backbone, got {self.transfer_scope!r}")
        if self.sr_display not in (0.5, 0.85):
            raise ConfigurationError(f"sr_display must be 0.5 or 0.85, got {self.sr_display}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    run: RunSettings = field(default_factory=RunSettings)


_SECTIONS = {
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "loss": LossConfig,
    "train": TrainSettings,
    "run": RunSettings,
}


def parse_kv_lines(text: str, source: str = "<config>") -> dict:
    """Flat dict from `key=value` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce(section: str, name: str, ftype, value: str):
    try:
        if name == "backbone_channels":
            return [int(v) for v in value.replace(",", " ").split()]
        if ftype in ("int", int):
            return int(value)
        if ftype in ("float", float):
            return float(value)
        return value
    except ValueError:
        raise ConfigurationError(f"{section}.{name}: cannot parse {value!r}") from None


def build_run_config(entries: dict) -> RunConfig:
    """Assemble a RunConfig from dotted-key entries, validating every key."""
    per_section: dict = {name: {} for name in _SECTIONS}
    for key, value in entries.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigurationError(f"unknown config key {key!r}")
        cls = _SECTIONS[section]
        known = {f.name: f.type for f in dc_fields(cls)}
        if name not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        per_section[section][name] = _coerce(section, name, known[name], value)
    return RunConfig(**{section: cls(**per_section[section]) for section, cls in _SECTIONS.items()})


def load_run_config(path=None, overrides: list | None = None) -> RunConfig:
    """Config file (optional) + `key=value` override strings, overrides last."""
    entries: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        entries.update(parse_kv_lines(p.read_text(encoding="utf-8"), str(p)))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override must be key=value, got {item!r}")
        key, _, value = item.partition("=")
        entries[key.strip()] = value.strip()
    return build_run_config(entries)
