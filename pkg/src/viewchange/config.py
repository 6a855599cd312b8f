"""Pipeline configuration: a flat INI file with one section per module.

Unknown sections or keys are rejected. Every field has a default, so an
empty or absent file yields the default pipeline; the CLI ``--seed`` flag
overrides the configured seed.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .densify import DensifyConfig
from .epipolar import RansacConfig
from .matching import MatchConfig


@dataclass(frozen=True)
class CameraConfig:
    kind: str = "equirectangular"
    span_h: float = 2.0 * math.pi
    span_v: float = 0.0          # 0 = derive from aspect ratio
    fx: float = 0.0              # 0 = 1.2 * max(W, H)
    fy: float = 0.0
    cx: float = -1.0             # -1 = image center
    cy: float = -1.0


@dataclass(frozen=True)
class TrainSection:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 2
    iterations: int = 500
    epochs: int = 0              # 0 = use iterations
    deterministic: bool = True


@dataclass(frozen=True)
class MetricsSection:
    threshold: float = 0.5
    aggregate: str = "pairs"     # or "pixels"


@dataclass(frozen=True)
class SynthSection:
    width: int = 128
    height: int = 128
    pairs: int = 8
    shift_mag: float = 8.0
    change_fraction: float = 0.15
    jitter: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    network: str = "dof-cdnet"   # "cdnet" (6ch) | "dof-cdnet" (8ch)
    d_max: float = 64.0
    camera: CameraConfig = field(default_factory=CameraConfig)
    matcher: MatchConfig = field(default_factory=MatchConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    train: TrainSection = field(default_factory=TrainSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    synth: SynthSection = field(default_factory=SynthSection)

    @property
    def in_channels(self) -> int:
        return 8 if self.network == "dof-cdnet" else 6

    def with_seed(self, seed: int) -> "PipelineConfig":
        from dataclasses import replace

        return replace(
            self, seed=seed,
            ransac=RansacConfig(
                seed=seed, max_iters=self.ransac.max_iters,
                threshold=self.ransac.threshold, confidence=self.ransac.confidence,
            ),
        )


_SECTION_TYPES = {
    "camera": CameraConfig,
    "matcher": MatchConfig,
    "ransac": RansacConfig,
    "densify": DensifyConfig,
    "train": TrainSection,
    "metrics": MetricsSection,
    "synth": SynthSection,
}
_PIPELINE_KEYS = {"seed", "network", "d_max"}
_RANSAC_KEY_MAP = {"threshold_rad": "threshold"}


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return target_type(value)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text)

    kwargs = {}
    for section in parser.sections():
        if section == "pipeline":
            for key, value in parser.items(section):
                if key not in _PIPELINE_KEYS:
                    raise ValueError(f"unknown key [pipeline] {key}")
                if key == "seed":
                    kwargs["seed"] = int(value)
                elif key == "network":
                    if value not in ("cdnet", "dof-cdnet"):
                        raise ValueError(f"unknown network {value!r}")
                    kwargs["network"] = value
                else:
                    kwargs["d_max"] = float(value)
            continue
        if section not in _SECTION_TYPES:
            raise ValueError(f"unknown config section [{section}]")
        cls = _SECTION_TYPES[section]
        type_map = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        overrides = {}
        for key, value in parser.items(section):
            name = _RANSAC_KEY_MAP.get(key, key) if section == "ransac" else key
            if name not in type_map:
                raise ValueError(f"unknown key [{section}] {key}")
            current = getattr(defaults, name)
            target = type(current) if current is not None else str
            overrides[name] = _coerce(value, target)
        kwargs[section] = cls(**{**{f.name: getattr(defaults, f.name) for f in fields(cls)}, **overrides})
    cfg = PipelineConfig(**kwargs)
    if "seed" in kwargs:
        cfg = cfg.with_seed(kwargs["seed"])
    return cfg
