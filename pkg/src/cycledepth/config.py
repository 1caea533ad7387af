"""Run configuration: JSON files plus dotted-path overrides.

A run config nests the scene description and the training knobs and
adds evaluation options.  Unknown keys are rejected rather than
ignored, so typos fail loudly at parse time.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace

from .optim import ConfigError, TrainConfig
from .synth import SURFACES, VARIANTS, SceneSpec

__all__ = [
    "RunConfig",
    "ConfigError",
    "config_from_dict",
    "config_to_dict",
    "apply_overrides",
    "load_config",
]


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs besides the output directory."""

    scene: SceneSpec = field(default_factory=SceneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: str = "clean"
    depth_cap: float = 150.0
    spot_count: int = 10
    spot_sigma: tuple[float, float] = (6.0, 14.0)
    spot_amp: tuple[float, float] = (0.12, 0.30)
    seed: int = 0

    def validate(self) -> None:
        self.train.validate()
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.scene.surface not in SURFACES:
            raise ConfigError(
                f"unknown surface {self.scene.surface!r}, "
                f"expected one of {SURFACES}")
        if self.depth_cap <= 0:
            raise ConfigError("depth_cap must be positive")
        if self.spot_count < 0:
            raise ConfigError("spot_count must be >= 0")


def _build_dataclass(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            v = tuple(v)
        coerced[f.name] = v
    try:
        return cls(**coerced)
    except TypeError as e:
        raise ConfigError(f"bad {where} config: {e}") from None


def config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig from plain nested dicts."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    if "scene" in data:
        kwargs["scene"] = _build_dataclass(SceneSpec, data["scene"], "scene")
    if "train" in data:
        kwargs["train"] = _build_dataclass(TrainConfig, data["train"], "train")
    for key in ("variant", "depth_cap", "spot_count", "spot_sigma",
                "spot_amp", "seed"):
        if key in data:
            v = data[key]
            kwargs[key] = tuple(v) if isinstance(v, list) else v
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-JSON echo of a config (tuples become lists)."""

    def clean(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: clean(getattr(obj, f.name))
                    for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        return obj

    return clean(cfg)


def apply_overrides(cfg: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply 'dotted.path=value' overrides; values parse as JSON when they
    can and fall back to bare strings."""
    data = config_to_dict(cfg)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data)


def load_config(path: str | None, assignments: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    """Load a config file (or defaults), apply overrides, pin the seed."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        cfg = config_from_dict(data)
    if assignments:
        cfg = apply_overrides(cfg, assignments)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
        cfg.validate()
    return cfg
