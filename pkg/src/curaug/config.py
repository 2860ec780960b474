"""Layered run configuration: defaults, then config file, then CLI flags.

One schema serves both the optional JSON config file and the resolved
snapshot embedded in every command's audit output, so a run can always be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

from .augmentation import TransformBounds
from .errors import ConfigError


@dataclass(frozen=True)
class CurationSection:
    feature_priority: tuple[str, ...] = ()
    q_low: float = 0.2
    q_high: float = 0.8


@dataclass(frozen=True)
class OodSection:
    k: int | None = None
    shrinkage: float = 1e-3


@dataclass(frozen=True)
class AugmentSection:
    feature: str = ""
    budget: int = 0
    filter_range: str = "0.05:1.00"
    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    translate_frac: tuple[float, float] = (-0.10, 0.10)
    scale: tuple[float, float] = (0.9, 1.1)
    shear: tuple[float, float] = (-0.1, 0.1)
    brightness_delta: tuple[float, float] = (-0.2, 0.2)
    contrast_factor: tuple[float, float] = (0.8, 1.2)

    def bounds(self) -> TransformBounds:
        return TransformBounds(
            rotation_deg=self.rotation_deg,
            translate_frac=self.translate_frac,
            scale=self.scale,
            shear=self.shear,
            brightness_delta=self.brightness_delta,
            contrast_factor=self.contrast_factor,
        )


@dataclass(frozen=True)
class MetricsSection:
    tolerance: float = 3.0
    features: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    label_range: tuple[int, int] = (0, 100)
    curation: CurationSection = field(default_factory=CurationSection)
    ood: OodSection = field(default_factory=OodSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["label_range"] = list(self.label_range)
        return doc


_SECTIONS = {
    "curation": CurationSection,
    "ood": OodSection,
    "augment": AugmentSection,
    "metrics": MetricsSection,
}


def _build_section(cls: type, data: Mapping[str, Any], where: str) -> Any:
    known = {f.name: f for f in fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{where}.{key}'")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config section '{where}': {exc}") from exc


def config_from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be an object")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key == "seed":
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError(f"seed must be a non-negative integer, got {value!r}")
            kwargs["seed"] = value
        elif key == "label_range":
            if (
                not isinstance(value, (list, tuple))
                or len(value) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
                or value[0] > value[1]
            ):
                raise ConfigError(f"label_range must be [lo, hi] with lo <= hi, got {value!r}")
            kwargs["label_range"] = (value[0], value[1])
        elif key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"config section '{key}' must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return PipelineConfig(**kwargs)


def load_config(path: str | None) -> PipelineConfig:
    """Read a config file, or return pure defaults when no path is given."""
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc.msg}") from exc
    return config_from_dict(data)


def override(cfg: PipelineConfig, **top_level: Any) -> PipelineConfig:
    """Replace top-level fields, dropping None values (flag not given)."""
    updates = {k: v for k, v in top_level.items() if v is not None}
    return replace(cfg, **updates) if updates else cfg


def override_section(cfg: PipelineConfig, section: str, **values: Any) -> PipelineConfig:
    updates = {k: v for k, v in values.items() if v is not None}
    if not updates:
        return cfg
    return replace(cfg, **{section: replace(getattr(cfg, section), **updates)})
