"""Generation configuration."""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _pair(value, name, cast=float):
    try:
        lo, hi = (cast(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a two-element range, got {value!r}") from exc
    if lo > hi:
        raise ConfigError(f"{name} lower bound exceeds upper bound: {value!r}")
    return lo, hi


@dataclass(frozen=True)
class GenConfig:
    resolution: tuple[int, int] = (584, 584)  # (width, height)
    focal_range: tuple[float, float] = (0.58, 0.88)
    views_per_image: int | None = None  # None: 1 pair per image, 9 views per multiview set
    max_rotation_deg: float = 15.0
    max_translation_frac: float = 0.15
    lock_view2: bool = False
    scale_range: tuple[float, float] = (0.75, 1.33)
    shift_frac: float = 0.05
    light_count: tuple[int, int] = (1, 3)
    light_intensity: tuple[float, float] = (1000.0, 3000.0)
    light_color: tuple[float, float] = (0.7, 1.0)
    light_distance: tuple[float, float] = (0.5, 1.5)  # meters in front of the median surface depth
    ambient: float = 300.0
    exposure: float = 1.0 / 3000.0
    shading: str = "lit"
    discontinuity_ratio: float = 0.1
    occlusion_tolerance: float = 0.02
    splat_radius: int = 0
    closing_radius: int = 1
    inpaint_cmd: str | None = None
    inpaint_max_iters: int = 500
    min_covisibility: float = 0.3
    max_attempts: int = 3
    identity_first_view: bool = True
    seed: int = 0

    def __post_init__(self):
        res = tuple(int(v) for v in (self.resolution if not isinstance(self.resolution, int)
                                     else (self.resolution, self.resolution)))
        if len(res) != 2 or min(res) < 32:
            raise ConfigError(f"resolution must be two sizes >= 32, got {self.resolution!r}")
        object.__setattr__(self, "resolution", res)
        focal = _pair(self.focal_range, "focal_range")
        if focal[0] <= 0:
            raise ConfigError("focal_range must be positive")
        object.__setattr__(self, "focal_range", focal)
        scale = _pair(self.scale_range, "scale_range")
        if scale[0] <= 0:
            raise ConfigError("scale_range must be positive")
        object.__setattr__(self, "scale_range", scale)
        count = _pair(self.light_count, "light_count", int)
        if count[0] < 1:
            raise ConfigError("light_count must allow at least one light")
        object.__setattr__(self, "light_count", count)
        inten = _pair(self.light_intensity, "light_intensity")
        if inten[0] <= 0:
            raise ConfigError("light_intensity must be positive")
        object.__setattr__(self, "light_intensity", inten)
        color = _pair(self.light_color, "light_color")
        if color[0] < 0 or color[1] > 1:
            raise ConfigError("light_color must lie in [0, 1]")
        object.__setattr__(self, "light_color", color)
        object.__setattr__(self, "light_distance", _pair(self.light_distance, "light_distance"))
        for name in ("max_rotation_deg", "max_translation_frac", "shift_frac", "ambient", "occlusion_tolerance",
                     "min_covisibility"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.exposure <= 0 or self.discontinuity_ratio <= 0:
            raise ConfigError("exposure and discontinuity_ratio must be positive")
        if self.shading not in ("lit", "albedo"):
            raise ConfigError(f"shading must be 'lit' or 'albedo', got {self.shading!r}")
        if self.splat_radius < 0 or self.closing_radius < 0:
            raise ConfigError("splat and closing radii must be non-negative")
        if self.views_per_image is not None and self.views_per_image < 1:
            raise ConfigError("views_per_image must be at least 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @property
    def pairs_per_image(self) -> int:
        return self.views_per_image or 1

    @property
    def multiview_count(self) -> int:
        return self.views_per_image or 9

    def replace(self, **changes) -> GenConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> GenConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> GenConfig:
        """Load a TOML or JSON file; TOML may nest keys under a ``[generation]`` table."""
        path = Path(path)
        text = path.read_text()
        try:
            if path.suffix.lower() == ".json":
                data = json.loads(text)
            else:
                data = tomllib.loads(text)
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if "generation" in data and isinstance(data["generation"], dict):
            data = data["generation"]
        return cls.from_dict(data)
