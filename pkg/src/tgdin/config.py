"""Configuration loading and validation.

A config document is a single JSON object with sections ``sim``,
``regimes``, ``train``, ``baselines``, ``eval``, ``paths`` plus a
top-level ``seed``.  Every key has a documented default (see README);
unknown keys are rejected.  The environment variable ``TGDIN_SEED``,
when set, overrides the root seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .core import SimConstants


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RegimeConfig:
    capacity_min_mbps: float = 20.0
    capacity_max_mbps: float = 600.0
    length_windows: int = 600
    capacity_step_frac: float = 0.005   # per-window walk increment bound
    capacity_band_frac: float = 0.2     # series clipped to base*(1 +/- band)
    ar_coeff: float = 0.9
    jitter_frac: float = 0.1
    onoff_period_min: int = 5
    onoff_period_max: int = 50
    onoff_duty_min: float = 0.2
    onoff_duty_max: float = 0.8
    grid_capacities: tuple[float, ...] = (20.0, 40.0, 60.0, 120.0, 200.0, 280.0, 360.0)
    grid_replicates: int = 3
    calib_bands: int = 8
    calib_traces_per_cell: int = 1

    def __post_init__(self) -> None:
        if self.capacity_min_mbps >= self.capacity_max_mbps:
            raise ConfigError("regimes.capacity range: empty range")
        if self.capacity_min_mbps <= 0:
            raise ConfigError("regimes.capacity_min_mbps must be positive")
        if self.length_windows < 2:
            raise ConfigError("regimes.length_windows must be >= 2")
        if not 0 < self.capacity_step_frac < 1:
            raise ConfigError("regimes.capacity_step_frac must be in (0,1)")
        if not 0 < self.capacity_band_frac < 1:
            raise ConfigError("regimes.capacity_band_frac must be in (0,1)")
        if not 0 <= self.ar_coeff < 1:
            raise ConfigError("regimes.ar_coeff must be in [0,1)")
        if self.onoff_period_min < 2 or self.onoff_period_max < self.onoff_period_min:
            raise ConfigError("regimes.onoff_period range: empty range")
        if not 0 < self.onoff_duty_min < self.onoff_duty_max < 1:
            raise ConfigError("regimes.onoff_duty range: empty range")
        if self.grid_replicates < 1:
            raise ConfigError("regimes.grid_replicates must be >= 1")
        if self.calib_bands < 1:
            raise ConfigError("regimes.calib_bands must be >= 1")
        if self.calib_traces_per_cell < 1:
            raise ConfigError("regimes.calib_traces_per_cell must be >= 1")
        for c in self.grid_capacities:
            if not self.capacity_min_mbps <= c <= self.capacity_max_mbps:
                raise ConfigError(
                    f"regimes.grid_capacities: {c} outside capacity range")


@dataclass(frozen=True)
class TrainConfig:
    k_windows: int = 5
    traces_per_round: int = 200
    refresh_every_epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-4
    weight_decay: float = 1e-5
    swap_prob: float = 0.5
    lambda_lin: float = 0.01
    lambda_delay: float = 0.1
    lambda_loss: float = 0.1
    max_epochs: int = 300
    patience: int = 20
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    hidden_dims: tuple[int, ...] = (128, 128, 128)

    def __post_init__(self) -> None:
        if self.k_windows < 1:
            raise ConfigError("train.k_windows must be >= 1")
        for name in ("traces_per_round", "refresh_every_epochs", "batch_size",
                     "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if not 0 <= self.swap_prob <= 1:
            raise ConfigError("train.swap_prob must be in [0,1]")
        for name in ("lr", "weight_decay", "lambda_lin", "lambda_delay",
                     "lambda_loss"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if self.lr == 0:
            raise ConfigError("train.lr must be positive")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 \
                or any(s < 0 for s in self.split):
            raise ConfigError("train.split must be three nonnegative fractions summing to 1")
        if len(self.hidden_dims) != 3:
            raise ConfigError("train.hidden_dims must list exactly three widths")


@dataclass(frozen=True)
class BaselineConfig:
    lr: float = 1e-3
    batch_size: int = 256
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    grad_clip: float = 5.0
    max_epochs: int = 60
    patience: int = 10
    val_frac: float = 0.1
    corpus_traces: int = 200
    gru_hidden: int = 64
    head_hidden: int = 64
    attn_proj: int = 64
    attn_heads: int = 4
    attn_ff: int = 128
    finetune_lr: float = 1e-4
    finetune_epochs: int = 20
    finetune_patience: int = 5
    finetune_val_frac: float = 0.1
    calib_prefix: bool = True   # contiguous-prefix calibration windows

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.finetune_lr <= 0:
            raise ConfigError("baselines.lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("baselines.plateau_factor must be in (0,1)")
        if self.grad_clip <= 0:
            raise ConfigError("baselines.grad_clip must be positive")
        if not 0 < self.val_frac < 1:
            raise ConfigError("baselines.val_frac must be in (0,1)")
        if not 0 < self.finetune_val_frac < 1:
            raise ConfigError("baselines.finetune_val_frac must be in (0,1)")
        for name in ("batch_size", "plateau_patience", "max_epochs", "patience",
                     "corpus_traces", "gru_hidden", "head_hidden", "attn_proj",
                     "attn_heads", "attn_ff", "finetune_epochs",
                     "finetune_patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"baselines.{name} must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    exclude_calibration_windows: bool = True

    def __post_init__(self) -> None:
        pass


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs"


@dataclass(frozen=True)
class Config:
    seed: int = 12345
    sim: SimConstants = field(default_factory=SimConstants)
    regimes: RegimeConfig = field(default_factory=RegimeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


_SECTIONS = {
    "sim": SimConstants,
    "regimes": RegimeConfig,
    "train": TrainConfig,
    "baselines": BaselineConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}

# JSON arrays map onto these tuple-typed fields.
_TUPLE_FIELDS = {"grid_capacities", "split", "hidden_dims"}


def _build_section(name: str, cls: type, raw: dict) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]!r}")
    kwargs = {}
    for key, value in raw.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(f"{name}.{key} must be an array")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from exc


def validate_config(document: dict | str | None = None) -> Config:
    """Validate a raw config document and apply defaults.

    Accepts a parsed dict, a JSON string, or None (all defaults).
    Raises ConfigError naming the offending key for out-of-range values
    and for unknown keys.
    """
    if document is None:
        raw: dict = {}
    elif isinstance(document, str):
        try:
            raw = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config does not parse as JSON: {exc}") from exc
    else:
        raw = dict(document)
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")

    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")

    seed = raw.get("seed", Config.seed)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")

    sections = {}
    for name, cls in _SECTIONS.items():
        sec_raw = raw.get(name, {})
        if not isinstance(sec_raw, dict):
            raise ConfigError(f"section {name!r} must be an object")
        try:
            sections[name] = _build_section(name, cls, sec_raw)
        except ConfigError:
            raise
        except ValueError as exc:
            # SimConstants raises plain ValueError on range violations.
            raise ConfigError(f"{name}: {exc}") from exc

    cfg = Config(seed=seed, **sections)

    env_seed = os.environ.get("TGDIN_SEED")
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError as exc:
            raise ConfigError("TGDIN_SEED must be an integer") from exc
        if cfg.seed < 0:
            raise ConfigError("TGDIN_SEED must be nonnegative")
    return cfg


def load_config(path: str | Path | None) -> Config:
    """Load and validate a config file (None -> all defaults)."""
    if path is None:
        return validate_config(None)
    text = Path(path).read_text()
    return validate_config(text)


def config_to_dict(cfg: Config) -> dict:
    """Full resolved configuration as a plain dict (for snapshots)."""
    out: dict[str, Any] = {"seed": cfg.seed}
    for name, cls in _SECTIONS.items():
        sec = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(sec, f.name)) for f in fields(cls)}
    return out


def _plain(v: Any) -> Any:
    if isinstance(v, tuple):
        return list(v)
    return v
