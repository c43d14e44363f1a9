"""Run configuration: presets, JSON round-trip, and the model digest.

A run config resolves every knob of the pipeline. Commands echo the
resolved config to disk next to their outputs; checkpoints embed the FNV-1a
digest of the model-relevant subset (sensor, class count, denoiser,
schedule) so stale or mismatched checkpoints fail fast at load.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .denoiser import DenoiserConfig
from .diffusion import SamplerConfig
from .errors import ValidationError
from .formats import canonical_json, fnv1a64
from .geometry import SensorSpec
from .scenegen import NUM_CLASSES, DomainConfig, domain_preset
from .training import TrainConfig

SENSOR_PRESETS = {
    "toy": SensorSpec(
        width=256, height=32, fov_up_deg=3.0, fov_down_deg=-25.0,
        r_min=1.0, r_max=50.0, mount_height=1.8,
    ),
    "kitti": SensorSpec(
        width=1024, height=64, fov_up_deg=3.0, fov_down_deg=-25.0,
        r_min=1.0, r_max=80.0, mount_height=1.8,
    ),
}


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_1: float = 1e-4
    beta_T: float = 0.02

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError("schedule T must be >= 1")
        if not 0 < self.beta_1 <= self.beta_T < 1:
            raise ValidationError("need 0 < beta_1 <= beta_T < 1")


@dataclass
class RunConfig:
    seed: int = 0
    sensor_preset: str = "toy"
    sensor: SensorSpec = field(default_factory=lambda: SENSOR_PRESETS["toy"])
    num_classes: int = NUM_CLASSES
    domain: str = "domain-A"
    domains: dict[str, DomainConfig] = field(
        default_factory=lambda: {
            "domain-A": domain_preset("domain-A"),
            "domain-B": domain_preset("domain-B"),
        }
    )
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(
        default_factory=lambda: DenoiserConfig(num_classes=NUM_CLASSES)
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    translation_fraction: float = 0.5

    def __post_init__(self):
        f = self.denoiser.downsample_factor
        if self.sensor.height % f or self.sensor.width % f:
            raise ValidationError(
                f"sensor grid {self.sensor.shape} must be divisible by the "
                f"denoiser stride {f}"
            )
        if self.denoiser.num_classes != self.num_classes:
            raise ValidationError("denoiser num_classes differs from run num_classes")
        if not 0.0 <= self.translation_fraction <= 1.0:
            raise ValidationError("translation_fraction must lie in [0, 1]")
        if self.domain not in self.domains:
            raise ValidationError(
                f"domain {self.domain!r} not among {sorted(self.domains)}"
            )


def _plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def to_dict(cfg: RunConfig) -> dict:
    return _plain(cfg)


def _pairs(d, name) -> dict:
    if not isinstance(d, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    return d


def _build(cls, data: dict, name: str, tuple_fields: dict[str, object] | None = None):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"unknown key(s) in {name}: {sorted(unknown)}")
    kwargs = dict(data)
    for key, conv in (tuple_fields or {}).items():
        if key in kwargs:
            kwargs[key] = conv(kwargs[key])
    return cls(**kwargs)


def _domain_from_dict(data: dict, name: str) -> DomainConfig:
    def pair_map(d):
        return {k: tuple(v) for k, v in d.items()}

    def size_map(d):
        return {k: tuple(tuple(p) for p in v) for k, v in d.items()}

    return _build(
        DomainConfig,
        data,
        name,
        {
            "counts": pair_map,
            "box_sizes": size_map,
            "cylinder_sizes": size_map,
            "placement_radius": tuple,
        },
    )


def from_dict(data: dict) -> RunConfig:
    data = dict(_pairs(data, "run config"))
    sections = {}
    if "sensor" in data:
        sections["sensor"] = _build(SensorSpec, data.pop("sensor"), "sensor")
    if "domains" in data:
        sections["domains"] = {
            k: _domain_from_dict(v, f"domains.{k}")
            for k, v in _pairs(data.pop("domains"), "domains").items()
        }
    if "schedule" in data:
        sections["schedule"] = _build(ScheduleConfig, data.pop("schedule"), "schedule")
    if "denoiser" in data:
        sections["denoiser"] = _build(
            DenoiserConfig,
            data.pop("denoiser"),
            "denoiser",
            {"channel_multipliers": tuple},
        )
    if "train" in data:
        sections["train"] = _build(
            TrainConfig, data.pop("train"), "train", {"adam_betas": tuple}
        )
    if "sampler" in data:
        sections["sampler"] = _build(SamplerConfig, data.pop("sampler"), "sampler")
    allowed = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
    return RunConfig(**data, **sections)


def resolve_preset(cfg_data: dict) -> dict:
    """Fill the sensor section from sensor_preset when not given explicitly."""
    data = dict(cfg_data)
    preset = data.get("sensor_preset", "toy")
    if "sensor" not in data:
        if preset not in SENSOR_PRESETS:
            raise ValidationError(
                f"unknown sensor preset {preset!r}; choose from {sorted(SENSOR_PRESETS)}"
            )
        data["sensor"] = _plain(SENSOR_PRESETS[preset])
    return data


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Config file (JSON) + flag overrides -> resolved RunConfig."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = val
    return from_dict(resolve_preset(data))


def config_text(cfg: RunConfig) -> str:
    return canonical_json(to_dict(cfg))


def core_config_text(cfg: RunConfig) -> str:
    """Canonical text of the model-defining subset (digested into checkpoints)."""
    core = {
        "sensor": _plain(cfg.sensor),
        "num_classes": cfg.num_classes,
        "denoiser": _plain(cfg.denoiser),
        "schedule": _plain(cfg.schedule),
    }
    return canonical_json(core)


def core_digest(cfg: RunConfig) -> int:
    return fnv1a64(core_config_text(cfg).encode("utf-8"))


def default_key_listing() -> str:
    """Flattened `key = default` listing used by the CLI --help epilog."""
    flat: list[str] = []

    def walk(prefix: str, obj):
        if isinstance(obj, dict):
            for k in obj:
                walk(f"{prefix}.{k}" if prefix else str(k), obj[k])
        else:
            flat.append(f"  {prefix} = {json.dumps(obj)}")

    walk("", to_dict(RunConfig()))
    return "\n".join(flat)
