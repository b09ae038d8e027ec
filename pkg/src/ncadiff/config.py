"""Run configuration: JSON schema, named presets and model/schedule builders.

A config file is a JSON object with the keys below (all optional; a "preset"
key fills defaults first, explicit keys override it, CLI flags override
both). Unknown keys anywhere are rejected by full key path before any
compute happens.

    {
      "preset": "desk",
      "model": "diff" | "fourierdiff",
      "c": 96, "h": 512, "s": 20, "fourier_steps": 32,
      "e_dim": 4, "enc_dim": 4, "fire_rate": 0.9,
      "padding": "reflect" | "zero" | "circular",
      "position_mode": "stretched" | "disabled",
      "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02},
      "train": {"lr": 1.6e-3, "lr_gamma": 0.9999, "adam_beta1": 0.9,
                 "adam_beta2": 0.99, "adam_eps": 1e-8, "steps": 200000,
                 "batch": 16, "ema_decay": 0.99, "seed": 0,
                 "grad_clip": null, "val_every": 200, "val_items": 48,
                 "checkpoint_every": 1000},
      "data": {"root": "path/", "synthetic": {"kind": "blobs", "size": 16,
                "count": 512, "seed": 0}, "patch_size": 64,
                "split": [0.8, 0.1, 0.1], "resize": null,
                "downscale_factor": null},
      "out_dir": "runs/exp"
    }

e_dim/enc_dim default per model kind when unset: (2, 1) for diff and (4, 4)
for fourierdiff, matching the two reference layouts.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import DatasetSpec, SyntheticSpec, ingest
from .diffusion import NoiseSchedule
from .errors import ConfigurationError
from .models import DiffNCA, FourierDiffNCA
from .training import TrainConfig


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class RunConfig:
    model: str = "fourierdiff"
    c: int = 96
    h: int = 512
    s: int = 20
    fourier_steps: int = 32
    e_dim: int | None = None
    enc_dim: int | None = None
    fire_rate: float = 0.9
    padding: str = "reflect"
    position_mode: str = "stretched"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetSpec = field(default_factory=lambda: DatasetSpec(synthetic=SyntheticSpec()))
    out_dir: str = "runs/default"

    def resolved_e_dims(self) -> tuple[int, int]:
        if self.model == "diff":
            return self.e_dim or 2, self.enc_dim or 1
        return self.e_dim or 4, self.enc_dim or 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"]["split"] = list(self.data.split)
        return d


PRESETS: dict[str, dict] = {
    # FourierDiff-NCA at its published defaults (~1.10m parameters)
    "paper-default": {"model": "fourierdiff", "c": 96, "h": 512, "s": 20},
    # enlarged variant (~1.85m parameters)
    "paper-1.85m": {"model": "fourierdiff", "c": 128, "h": 640, "s": 20},
    # image-space-only model (~331k parameters)
    "paper-diff": {"model": "diff", "c": 96, "h": 512, "s": 20},
    # ablation rows: one knob changed from paper-default each
    "ablation-s10": {"model": "fourierdiff", "c": 96, "h": 512, "s": 10},
    "ablation-s30": {"model": "fourierdiff", "c": 96, "h": 512, "s": 30},
    "ablation-h256": {"model": "fourierdiff", "c": 96, "h": 256, "s": 20},
    "ablation-c48": {"model": "fourierdiff", "c": 48, "h": 512, "s": 20},
    # small preset that trains in minutes on a CPU
    "desk": {
        "model": "diff",
        "c": 32,
        "h": 64,
        "s": 8,
        "padding": "circular",
        "position_mode": "disabled",
        "schedule": {"T": 50},
        "train": {"steps": 2000, "batch": 8, "checkpoint_every": 1000},
        "data": {"synthetic": {"kind": "blobs", "size": 16, "count": 512, "seed": 0}},
    },
}

_SCHEDULE_KEYS = {"T": int, "beta_start": float, "beta_end": float}
_TRAIN_KEYS = {
    "lr": float,
    "lr_gamma": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "steps": int,
    "batch": int,
    "ema_decay": float,
    "seed": int,
    "grad_clip": (float, type(None)),
    "val_every": int,
    "val_items": int,
    "checkpoint_every": int,
}
_SYNTHETIC_KEYS = {"kind": str, "size": int, "count": int, "seed": int}
_DATA_KEYS = {
    "root": (str, type(None)),
    "synthetic": (dict, type(None)),
    "patch_size": int,
    "split": list,
    "resize": (int, type(None)),
    "downscale_factor": (int, type(None)),
}
_TOP_KEYS = {
    "preset": str,
    "model": str,
    "c": int,
    "h": int,
    "s": int,
    "fourier_steps": int,
    "e_dim": (int, type(None)),
    "enc_dim": (int, type(None)),
    "fire_rate": float,
    "padding": str,
    "position_mode": str,
    "schedule": dict,
    "train": dict,
    "data": dict,
    "out_dir": str,
}


def _check_keys(obj: dict, schema: dict, path: str) -> None:
    for key, value in obj.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigurationError(f"unknown config key: {where}")
        expected = schema[key]
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            continue  # JSON integers are fine where floats are expected
        if isinstance(expected, tuple):
            if isinstance(value, bool) or not isinstance(value, expected):
                raise ConfigurationError(
                    f"{where}: expected {'/'.join(t.__name__ for t in expected)}, "
                    f"got {type(value).__name__}"
                )
        elif isinstance(value, bool) or not isinstance(value, expected):
            raise ConfigurationError(
                f"{where}: expected {expected.__name__}, got {type(value).__name__}"
            )


def _validate_tree(raw: dict) -> None:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "")
    _check_keys(raw.get("schedule", {}), _SCHEDULE_KEYS, "schedule")
    _check_keys(raw.get("train", {}), _TRAIN_KEYS, "train")
    data = raw.get("data", {})
    _check_keys(data, _DATA_KEYS, "data")
    _check_keys(data.get("synthetic") or {}, _SYNTHETIC_KEYS, "data.synthetic")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a raw config dict (plus optional flag overrides) into a RunConfig."""
    _validate_tree(raw)
    merged = copy.deepcopy(raw)
    preset_name = merged.pop("preset", None)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigurationError(
                f"preset: unknown preset {preset_name!r}; known: {sorted(PRESETS)}"
            )
        merged = _merge(PRESETS[preset_name], merged)
    if overrides:
        merged = _merge(merged, {k: v for k, v in overrides.items() if v is not None})
        _validate_tree(merged)

    cfg = RunConfig()
    schedule = merged.pop("schedule", {})
    train = merged.pop("train", {})
    data = merged.pop("data", {})
    for key, value in merged.items():
        setattr(cfg, key, value)
    cfg.schedule = ScheduleConfig(**schedule)
    cfg.train = TrainConfig(**train)
    synthetic = data.pop("synthetic", None)
    if "split" in data:
        data["split"] = tuple(float(f) for f in data["split"])
    cfg.data = DatasetSpec(
        synthetic=SyntheticSpec(**synthetic) if synthetic is not None else None, **data
    )

    if cfg.model not in ("diff", "fourierdiff"):
        raise ConfigurationError(f"model: expected 'diff' or 'fourierdiff', got {cfg.model!r}")
    if cfg.c < 6:
        raise ConfigurationError(f"c: state needs >= 6 channels, got {cfg.c}")
    if cfg.s < 1 or cfg.fourier_steps < 1:
        raise ConfigurationError("s and fourier_steps must be >= 1")
    if not 0.0 < cfg.fire_rate <= 1.0:
        raise ConfigurationError(f"fire_rate: must be in (0, 1], got {cfg.fire_rate}")
    cfg.train.validate()
    cfg.data.validate()
    NoiseSchedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON: {exc}") from exc
    return resolve_config(raw, overrides)


def build_model(cfg: RunConfig):
    e_dim, enc_dim = cfg.resolved_e_dims()
    common = dict(
        channels=cfg.c,
        hidden=cfg.h,
        steps=cfg.s,
        e_dim=e_dim,
        enc_dim=enc_dim,
        fire_rate=cfg.fire_rate,
        padding=cfg.padding,
        position_mode=cfg.position_mode,
        seed=cfg.train.seed,
    )
    if cfg.model == "diff":
        return DiffNCA(**common)
    return FourierDiffNCA(fourier_steps=cfg.fourier_steps, **common)


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)


def build_dataset(cfg: RunConfig):
    return ingest(cfg.data)
