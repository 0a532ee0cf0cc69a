"""Declarative configuration: one JSON document holding the grid, anchor,
scan, augmentation, tracker, and evaluation settings. Unknown keys are
rejected so typos fail loudly."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .anchors import MatchThresholds
from .augment import AugPlan
from .backbone import BackboneSpec
from .lidar_sim import ScanPattern, VoxelRegion
from .metrics import TP_IOU_THRESHOLD
from .pillars import PillarGridSpec
from .tracker import TrackerConfig

__all__ = ["Config", "EvalConfig", "ConfigError", "load_config", "default_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = TP_IOU_THRESHOLD
    use_bev: bool = False


@dataclass
class Config:
    grid: PillarGridSpec = field(default_factory=PillarGridSpec)
    scan: ScanPattern = field(default_factory=ScanPattern)
    match: MatchThresholds = field(default_factory=MatchThresholds)
    augment: AugPlan = field(default_factory=AugPlan)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    window_ms: float = 100.0
    sensor_elevation: float = 0.0


_TUPLE_FIELDS = {"x_range", "y_range", "z_range", "translation", "block_convs",
                 "block_channels", "block_strides", "up_strides", "size"}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = allowed[name].type
        if name == "region":
            kwargs[name] = _build(VoxelRegion, value, f"{path}.{name}")
        elif isinstance(value, dict):
            raise ConfigError(f"{path}.{name}: nested object not expected here")
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_SECTIONS = {
    "grid": PillarGridSpec,
    "scan": ScanPattern,
    "match": MatchThresholds,
    "augment": AugPlan,
    "tracker": TrackerConfig,
    "eval": EvalConfig,
    "backbone": BackboneSpec,
}


def load_config(path) -> Config:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known_scalar = {"window_ms", "sensor_elevation"}
    unknown = set(raw) - set(_SECTIONS) - known_scalar
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    cfg = Config()
    for section, cls in _SECTIONS.items():
        if section in raw:
            setattr(cfg, section, _build(cls, raw[section], section))
    for name in known_scalar:
        if name in raw:
            if not isinstance(raw[name], (int, float)):
                raise ConfigError(f"{name}: expected a number")
            setattr(cfg, name, float(raw[name]))
    return cfg


def default_config() -> Config:
    return Config()


def config_to_dict(cfg: Config) -> dict:
    out = {}
    for section, cls in _SECTIONS.items():
        out[section] = dataclasses.asdict(getattr(cfg, section))
    out["window_ms"] = cfg.window_ms
    out["sensor_elevation"] = cfg.sensor_elevation
    return out
