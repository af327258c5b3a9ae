"""Software triangle rasterizer with Lambertian point-light shading.

Pixel centers sit at integer coordinates. Coverage follows the top-left fill
rule so pixels on a shared edge belong to exactly one triangle, and z-buffer
ties keep the lowest face index. Interpolation is perspective-correct.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .camera import Intrinsics, Pose
from .errors import ConfigError
from .lift import DepthMap
from .mesh import TriMesh, vertex_normals  # noqa: F401  (re-exported)

DEFAULT_EXPOSURE = 1.0 / 3000.0
# Ambient is in light-intensity units: 300 * (1/3000) = 0.1 of full scale.
DEFAULT_AMBIENT = 300.0
MIN_LIGHT_DISTANCE = 0.05
NEAR_PLANE = 1e-6


@dataclass(frozen=True)
class PointLight:
    position: tuple[float, float, float]
    intensity: float
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.intensity > 0:
            raise ConfigError(f"light intensity must be positive, got {self.intensity}")
        if len(self.color) != 3 or any(not 0.0 <= c <= 1.0 for c in self.color):
            raise ConfigError(f"light color must be RGB in [0, 1], got {self.color}")
        object.__setattr__(self, "position", tuple(float(p) for p in self.position))
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))
        object.__setattr__(self, "intensity", float(self.intensity))

    def to_dict(self) -> dict:
        return {"position": list(self.position), "intensity": self.intensity, "color": list(self.color)}

    @classmethod
    def from_dict(cls, data: dict) -> PointLight:
        return cls(tuple(data["position"]), float(data["intensity"]), tuple(data["color"]))


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray       # (H, W, 3) linear RGB clamped to [0, 1]
    radiance: np.ndarray    # (H, W, 3) linear RGB before clamping
    depth: DepthMap
    coverage: np.ndarray    # (H, W) bool
    face_index: np.ndarray  # (H, W) int64, -1 where uncovered

    @property
    def is_empty(self) -> bool:
        return not self.coverage.any()


def sample_lights(rng: np.random.Generator, count_range=(1, 3), intensity_range=(1000.0, 3000.0),
                  color_range=(0.7, 1.0), position_box=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
    """Draw a list of point lights; count and intensity ranges are inclusive."""
    lo_n, hi_n = (int(v) for v in count_range)
    lo_i, hi_i = (float(v) for v in intensity_range)
    lo_c, hi_c = (float(v) for v in color_range)
    box_lo = np.asarray(position_box[0], dtype=float)
    box_hi = np.asarray(position_box[1], dtype=float)
    if not 1 <= lo_n <= hi_n:
        raise ConfigError(f"invalid light count range {count_range!r}")
    if not 0 < lo_i <= hi_i:
        raise ConfigError(f"invalid intensity range {intensity_range!r}")
    if not 0 <= lo_c <= hi_c <= 1:
        raise ConfigError(f"invalid light color range {color_range!r}")
    if box_lo.shape != (3,) or box_hi.shape != (3,) or np.any(box_lo > box_hi):
        raise ConfigError(f"invalid light position box {position_box!r}")
    count = int(rng.integers(lo_n, hi_n + 1))
    lights = []
    for _ in range(count):
        pos = rng.uniform(box_lo, box_hi)
        intensity = rng.uniform(lo_i, hi_i)
        color = rng.uniform(lo_c, hi_c, size=3)
        lights.append(PointLight(tuple(pos), float(intensity), tuple(color)))
    return lights


@numba.njit(cache=True, inline="always")
def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


@numba.njit(cache=True, inline="always")
def _is_top_left(ax, ay, bx, by, cx, cy):
    if ay == by:
        return cy > ay
    x_at = ax + (cy - ay) * (bx - ax) / (by - ay)
    return x_at < cx


@numba.njit(cache=True)
def _raster_kernel(screen, z, faces, attrs, width, height, depth, out_attr, face_id):
    n_ch = attrs.shape[1]
    for f in range(faces.shape[0]):
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        if z[i0] <= NEAR_PLANE or z[i1] <= NEAR_PLANE or z[i2] <= NEAR_PLANE:
            continue
        area = _edge(screen[i0, 0], screen[i0, 1], screen[i1, 0], screen[i1, 1],
                     screen[i2, 0], screen[i2, 1])
        if area == 0.0 or not np.isfinite(area):
            continue
        if area < 0.0:
            i1, i2 = i2, i1
            area = -area
        x0 = screen[i0, 0]
        y0 = screen[i0, 1]
        x1 = screen[i1, 0]
        y1 = screen[i1, 1]
        x2 = screen[i2, 0]
        y2 = screen[i2, 1]
        xmin = max(0, int(np.ceil(min(x0, x1, x2))))
        xmax = min(width - 1, int(np.floor(max(x0, x1, x2))))
        ymin = max(0, int(np.ceil(min(y0, y1, y2))))
        ymax = min(height - 1, int(np.floor(max(y0, y1, y2))))
        if xmin > xmax or ymin > ymax:
            continue
        tl0 = _is_top_left(x1, y1, x2, y2, x0, y0)
        tl1 = _is_top_left(x2, y2, x0, y0, x1, y1)
        tl2 = _is_top_left(x0, y0, x1, y1, x2, y2)
        iz0 = 1.0 / z[i0]
        iz1 = 1.0 / z[i1]
        iz2 = 1.0 / z[i2]
        for py in range(ymin, ymax + 1):
            fy = float(py)
            for px in range(xmin, xmax + 1):
                fx = float(px)
                w0 = _edge(x1, y1, x2, y2, fx, fy)
                w1 = _edge(x2, y2, x0, y0, fx, fy)
                w2 = _edge(x0, y0, x1, y1, fx, fy)
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if (w0 == 0.0 and not tl0) or (w1 == 0.0 and not tl1) or (w2 == 0.0 and not tl2):
                    continue
                b0 = w0 / area
                b1 = w1 / area
                b2 = w2 / area
                inv_z = b0 * iz0 + b1 * iz1 + b2 * iz2
                zz = 1.0 / inv_z
                if zz < depth[py, px]:
                    depth[py, px] = zz
                    face_id[py, px] = f
                    c0 = b0 * iz0 * zz
                    c1 = b1 * iz1 * zz
                    c2 = b2 * iz2 * zz
                    for c in range(n_ch):
                        out_attr[py, px, c] = c0 * attrs[i0, c] + c1 * attrs[i1, c] + c2 * attrs[i2, c]


def rasterize_attributes(vertices_cam, faces, attrs, k: Intrinsics):
    """Z-buffer rasterization of camera-frame triangles.

    Returns ``(depth, attributes, face_id)`` where ``depth`` is ``inf`` and
    ``face_id`` is -1 on uncovered pixels.
    """
    v = np.ascontiguousarray(vertices_cam, dtype=np.float64)
    z = v[:, 2].copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        screen = np.stack([k.fx * v[:, 0] / z + k.cx, k.fy * v[:, 1] / z + k.cy], axis=1)
    attrs = np.ascontiguousarray(attrs, dtype=np.float64)
    if attrs.ndim == 1:
        attrs = attrs[:, None]
    depth = np.full((k.height, k.width), np.inf)
    out = np.zeros((k.height, k.width, attrs.shape[1]))
    face_id = np.full((k.height, k.width), -1, dtype=np.int64)
    if len(faces):
        _raster_kernel(np.ascontiguousarray(screen), z, np.ascontiguousarray(faces, dtype=np.int64),
                       attrs, k.width, k.height, depth, out, face_id)
    return depth, out, face_id


def shade_lambert(albedo, normals, positions, lights, ambient=DEFAULT_AMBIENT, exposure=DEFAULT_EXPOSURE):
    """Pre-clamp radiance ``albedo * (ambient + sum_j c_j I_j max(0, n.l_j) / d_j^2) * exposure``.

    Arrays are (N, 3); ``normals`` need not be normalized.
    """
    n = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
    irradiance = np.full((len(albedo), 3), float(ambient))
    for light in lights:
        to_light = np.asarray(light.position) - positions
        dist = np.linalg.norm(to_light, axis=1)
        l_dir = to_light / np.maximum(dist, 1e-300)[:, None]
        cos = np.maximum(0.0, np.einsum("ij,ij->i", n, l_dir))
        falloff = cos / np.maximum(dist, MIN_LIGHT_DISTANCE) ** 2
        irradiance += light.intensity * np.asarray(light.color) * falloff[:, None]
    return albedo * irradiance * exposure


def rasterize(mesh: TriMesh, k: Intrinsics, pose: Pose, lights=(), shading="lit",
              ambient=DEFAULT_AMBIENT, exposure=DEFAULT_EXPOSURE) -> RenderOutput:
    """Render ``mesh`` (world frame) from camera ``(k, pose)``.

    ``shading="albedo"`` outputs interpolated vertex colors; ``"lit"`` applies
    Lambertian shading in the world frame. An empty mesh yields an output
    with no coverage (check ``RenderOutput.is_empty``).
    """
    if shading not in ("lit", "albedo"):
        raise ConfigError(f"unknown shading mode {shading!r}")
    verts_cam = pose.transform(mesh.vertices) if len(mesh.vertices) else mesh.vertices
    attrs = np.concatenate([mesh.vertex_colors, mesh.vertex_normals, mesh.vertices], axis=1)
    depth, out, face_id = rasterize_attributes(verts_cam, mesh.faces, attrs, k)
    coverage = face_id >= 0
    radiance = np.zeros((k.height, k.width, 3))
    albedo = out[coverage, 0:3]
    if shading == "albedo":
        radiance[coverage] = albedo
    else:
        radiance[coverage] = shade_lambert(albedo, out[coverage, 3:6], out[coverage, 6:9], lights,
                                           ambient=ambient, exposure=exposure)
    depth_map = DepthMap(np.where(coverage, depth, np.nan), coverage)
    return RenderOutput(np.clip(radiance, 0.0, 1.0), radiance, depth_map, coverage, face_id)
