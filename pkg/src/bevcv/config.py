"""Run configuration: JSON in, validated frozen dataclasses out."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .geometry import BevGridSpec, CameraIntrinsics
from .imaging import CropSpec
from .loss import LossConfig
from .net.model import ModelConfig
from .train import TrainerConfig

_SECTIONS = {
    "intrinsics": CameraIntrinsics,
    "grid": BevGridSpec,
    "crop": CropSpec,
    "loss": LossConfig,
    "trainer": TrainerConfig,
}


@dataclass(frozen=True)
class RunConfig:
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    grid: BevGridSpec = field(default_factory=BevGridSpec)
    crop: CropSpec = field(default_factory=CropSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seed: int = 0

    def model_config(self) -> ModelConfig:
        return ModelConfig(intrinsics=self.intrinsics, grid=self.grid)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _coerce(section: str, cls, name: str, value, ftype):
    path = f"{section}.{name}"
    ftype = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    if ftype == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(name, f"{path} must be a number, got {value!r}")
        return float(value)
    if ftype == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(name, f"{path} must be an integer, got {value!r}")
        return value
    if ftype == "bool":
        if not isinstance(value, bool):
            raise ValidationError(name, f"{path} must be true or false, got {value!r}")
        return value
    if ftype == "str":
        if not isinstance(value, str):
            raise ValidationError(name, f"{path} must be a string, got {value!r}")
        return value
    return value


def _build_section(section: str, cls, obj):
    if not isinstance(obj, dict):
        raise ValidationError(section, f"{section} must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(obj) - set(known)
    if unknown:
        name = sorted(unknown)[0]
        raise ValidationError(name, f"unknown field {section}.{name}")
    kwargs = {k: _coerce(section, cls, k, v, known[k].type) for k, v in obj.items()}
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise ValidationError(exc.field, f"{section}.{exc.field}: {exc}") from None


def config_from_dict(obj) -> RunConfig:
    if not isinstance(obj, dict):
        raise ValidationError("config", "config must be a JSON object")
    unknown = set(obj) - set(_SECTIONS) - {"seed"}
    if unknown:
        name = sorted(unknown)[0]
        raise ValidationError(name, f"unknown config section {name!r}")
    kwargs = {name: _build_section(name, cls, obj[name]) for name, cls in _SECTIONS.items() if name in obj}
    if "seed" in obj:
        seed = obj["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ValidationError("seed", f"seed must be an unsigned 64-bit integer, got {seed!r}")
        kwargs["seed"] = seed
    return RunConfig(**kwargs)


def load_config(path=None) -> RunConfig:
    """Parse a JSON config file; ``None`` gives the all-defaults config."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    return config_from_dict(obj)
