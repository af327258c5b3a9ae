"""Depth maps, depth augmentation and lifting single images into 3D."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, unproject_pixels
from .color import as_float_image, srgb_to_linear
from .errors import ConfigError, InputError
from .mesh import TriMesh, vertex_normals

DEFAULT_DISCONTINUITY_RATIO = 0.1
DEFAULT_SCALE_RANGE = (0.75, 1.33)
DEFAULT_SHIFT_FRAC = 0.05


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray  # (H, W) float64 meters; invalid entries are NaN
    valid: np.ndarray   # (H, W) bool

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputError(f"depth must be 2-D, got shape {values.shape}")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise InputError("validity mask shape does not match depth")
        with np.errstate(invalid="ignore"):
            valid = valid & np.isfinite(values) & (values > 0)
        values[~valid] = np.nan
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values) -> DepthMap:
        """Wrap raw depth; non-finite or non-positive entries become invalid."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def median(self) -> float:
        if not self.valid.any():
            return float("nan")
        return float(np.median(self.values[self.valid]))

    def astype32(self) -> DepthMap:
        """Round valid depths to float32 precision (what PFM stores)."""
        return DepthMap(self.values.astype(np.float32).astype(np.float64), self.valid)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray        # (N, 3) camera frame, meters
    colors: np.ndarray        # (N, 3) linear RGB
    source_pixel: np.ndarray  # (N, 2) int (u, v)

    def __len__(self):
        return len(self.points)


def scale_shift_depth(d: DepthMap, a: float, b: float) -> DepthMap:
    """Affine depth augmentation ``a * d + b``; pixels driven non-positive become invalid."""
    if not a > 0:
        raise ConfigError(f"depth scale must be positive, got {a}")
    return DepthMap(a * d.values + b, d.valid)


def sample_scale_shift(rng: np.random.Generator, d: DepthMap, scale_range=DEFAULT_SCALE_RANGE,
                       shift_frac=DEFAULT_SHIFT_FRAC) -> tuple[float, float]:
    """Draw ``a`` log-uniform in ``scale_range`` and ``b`` uniform in ``±shift_frac * median``."""
    lo, hi = scale_range
    if not (0 < lo <= hi) or shift_frac < 0:
        raise ConfigError(f"invalid scale/shift ranges {scale_range!r}, {shift_frac!r}")
    a = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    med = d.median()
    b = float(rng.uniform(-shift_frac, shift_frac)) * (med if np.isfinite(med) else 0.0)
    return a, b


def _check_aligned(image, d: DepthMap, k: Intrinsics):
    if image.shape[:2] != d.shape:
        raise InputError(f"image {image.shape[:2]} and depth {d.shape} sizes differ")
    if (k.height, k.width) != d.shape:
        raise InputError(f"intrinsics size {k.width}x{k.height} does not match depth {d.width}x{d.height}")


def lift_to_pointcloud(image, d: DepthMap, k: Intrinsics) -> PointCloud:
    """One camera-frame point per valid depth pixel; ``image`` is sRGB."""
    img = as_float_image(image)
    _check_aligned(img, d, k)
    vs, us = np.nonzero(d.valid)
    pts = unproject_pixels(us, vs, d.values[vs, us], k)
    colors = srgb_to_linear(img[vs, us])
    return PointCloud(pts, colors, np.stack([us, vs], axis=1).astype(np.int64))


def triangulate_depth_grid(image, d: DepthMap, k: Intrinsics,
                           discontinuity_ratio: float = DEFAULT_DISCONTINUITY_RATIO) -> TriMesh:
    """Mesh the organized depth grid, two triangles per fully valid 2x2 quad.

    Every valid pixel becomes a vertex (row-major order). A triangle is
    dropped when the ratio of its largest to smallest vertex depth exceeds
    ``1 + discontinuity_ratio``. The result may be empty.
    """
    if not discontinuity_ratio > 0:
        raise ConfigError(f"discontinuity_ratio must be positive, got {discontinuity_ratio}")
    img = as_float_image(image)
    _check_aligned(img, d, k)
    h, w = d.shape
    index = np.full((h, w), -1, dtype=np.int64)
    vs, us = np.nonzero(d.valid)
    index[vs, us] = np.arange(len(vs))
    vertices = unproject_pixels(us, vs, d.values[vs, us], k)
    colors = srgb_to_linear(img[vs, us])

    tl, tr = index[:-1, :-1], index[:-1, 1:]
    bl, br = index[1:, :-1], index[1:, 1:]
    quad = (tl >= 0) & (tr >= 0) & (bl >= 0) & (br >= 0)
    # Winding (tl, bl, tr) / (tr, bl, br) gives normals facing the camera.
    tris = np.concatenate([
        np.stack([tl[quad], bl[quad], tr[quad]], axis=1),
        np.stack([tr[quad], bl[quad], br[quad]], axis=1),
    ])
    if len(tris):
        z = vertices[tris, 2]
        keep = z.max(axis=1) <= z.min(axis=1) * (1.0 + discontinuity_ratio)
        tris = tris[keep]
    if len(tris):
        v0 = vertices[tris[:, 0]]
        cross = np.cross(vertices[tris[:, 1]] - v0, vertices[tris[:, 2]] - v0)
        tris = tris[np.linalg.norm(cross, axis=1) > 1e-20]
    mesh = TriMesh(vertices, tris, colors, np.zeros_like(vertices))
    return vertex_normals(mesh)
