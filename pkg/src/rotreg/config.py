"""Run configuration: YAML file plus command-line overrides, with strict
unknown-key rejection and a stable content hash for reproducibility blocks.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

DEFAULT_THRESHOLDS_DEG = tuple(range(5, 185, 5))


def _default_counts():
    return {"train": {"low": 100}, "test": {"low": 100}}


@dataclass
class RunConfig:
    """All knobs for generate/train/eval, with the published defaults."""

    variant: str = "PN"
    n: int = 256
    k: int = 10
    lr: float = 0.008
    batch_size: int = 128
    iterations: int = 500
    seed: int = 0
    channel_mode: str = "XYZ"
    object: str = "l_shape"
    noise_sigma: float = 0.003
    translation_sigma: float = 0.0
    counts: dict = field(default_factory=_default_counts)
    thresholds_deg: tuple = DEFAULT_THRESHOLDS_DEG
    add_threshold: Optional[float] = None
    early_stop_deg: Optional[float] = None
    split: str = "test"
    workers: int = 1
    dataset: str = ""
    checkpoint: str = ""
    resume: str = ""
    report: str = ""
    out: str = "."

    def __post_init__(self):
        if self.variant not in ("PN", "DG"):
            raise ConfigError(f"variant must be PN or DG, got {self.variant!r}")
        if self.channel_mode not in ("XYZ", "XYZRGB"):
            raise ConfigError(f"channel_mode must be XYZ or XYZRGB, got {self.channel_mode!r}")
        if self.n <= self.k:
            raise ConfigError(f"n={self.n} must exceed k={self.k}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for batch normalization")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        bad = [t for t in self.thresholds_deg if not 0 < t <= 360]
        if bad:
            raise ConfigError(f"thresholds_deg out of range: {bad}")


def _known_keys():
    return {f.name for f in fields(RunConfig)}


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the YAML file, then overrides; overrides win.

    Unknown keys anywhere are errors, named in the message.
    """
    merged = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        with open(p) as f:
            try:
                loaded = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {p} must hold a mapping")
        merged.update(loaded)
    if overrides:
        merged.update(overrides)

    unknown = sorted(set(merged) - _known_keys())
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "thresholds_deg" in merged:
        merged["thresholds_deg"] = tuple(merged["thresholds_deg"])
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def parse_override(text: str):
    """One --set KEY=VALUE argument; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if key not in _known_keys():
        raise ConfigError(f"unknown config key in override: {key}")
    try:
        return key, yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {value!r}: {exc}") from exc


# filesystem locations do not shape the computed content, so the hash skips
# them: the same run lands the same hash on any machine or directory layout
_UNHASHED = ("dataset", "checkpoint", "resume", "report", "out")


def config_hash(cfg: RunConfig) -> str:
    """Stable digest of the content-shaping part of the configuration."""
    plain = _plain(asdict(cfg))
    for key in _UNHASHED:
        plain.pop(key)
    canon = yaml.safe_dump(plain, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(_plain(asdict(cfg)), sort_keys=False)
