"""Pinhole intrinsics, rigid world-to-camera poses and camera samplers.

Camera frame is right-handed with +z forward, +x right and +y down, so pixel
``(u, v)`` has its center at integer coordinates and ``project`` inverts
``unproject`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, InputError

DEFAULT_FOCAL_RANGE = (0.58, 0.88)
DEFAULT_MAX_ROTATION_DEG = 15.0
DEFAULT_MAX_TRANSLATION_FRAC = 0.15


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise DomainError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def scaled(self, width: int, height: int) -> Intrinsics:
        """The same camera sampled on a ``width x height`` grid covering the same field of view."""
        sx, sy = width / self.width, height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5,
                          int(width), int(height))

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Intrinsics:
        return cls(
            float(data["fx"]),
            float(data["fy"]),
            float(data["cx"]),
            float(data["cy"]),
            int(data["width"]),
            int(data["height"]),
        )


def _quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(m) -> np.ndarray:
    # Shepperd's method: branch on the largest diagonal term for stability.
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > max(m[0, 0], m[1, 1], m[2, 2]):
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] >= m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return _canonical_quat(np.array(q))


def _canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def _quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def axis_angle_quat(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0 or angle_rad == 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    half = 0.5 * angle_rad
    return _canonical_quat(np.concatenate([[math.cos(half)], math.sin(half) * axis]))


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform ``x_cam = R @ x_world + t``.

    ``q`` is the rotation as a unit quaternion ``(w, x, y, z)``.
    """

    q: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        t = tuple(float(v) for v in self.t)
        if len(q) != 4 or len(t) != 3:
            raise InputError("pose needs a 4-element quaternion and a 3-element translation")
        if abs(math.sqrt(sum(v * v for v in q)) - 1.0) > 1e-9:
            raise DomainError(f"quaternion is not unit norm: {q}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_quat(cls, q, t=(0.0, 0.0, 0.0)) -> Pose:
        """Build from a possibly unnormalized quaternion."""
        return cls(tuple(_canonical_quat(q)), tuple(np.asarray(t, dtype=float)))

    @classmethod
    def from_matrix(cls, rotation, translation=(0.0, 0.0, 0.0)) -> Pose:
        rotation = np.asarray(rotation, dtype=float)
        if rotation.shape == (4, 4):
            translation = rotation[:3, 3]
            rotation = rotation[:3, :3]
        return cls(tuple(_matrix_to_quat(rotation)), tuple(np.asarray(translation, dtype=float)))

    @property
    def rotation(self) -> np.ndarray:
        return _quat_to_matrix(self.q)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.t)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.t
        return m

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def inverse(self) -> Pose:
        q_inv = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        t_inv = -(_quat_to_matrix(q_inv) @ self.translation)
        return Pose.from_quat(q_inv, t_inv)

    def compose(self, other: Pose) -> Pose:
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        q = _quat_mul(self.q, other.q)
        t = self.rotation @ other.translation + self.translation
        return Pose.from_quat(q, t)

    def transform(self, points) -> np.ndarray:
        """Apply the transform to an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def rotation_angle_deg(self) -> float:
        w = min(1.0, abs(self.q[0]))
        return math.degrees(2.0 * math.acos(w))

    def to_dict(self) -> dict:
        return {"q": [float(v) for v in self.q], "t": [float(v) for v in self.t]}

    @classmethod
    def from_dict(cls, data: dict) -> Pose:
        return cls(tuple(data["q"]), tuple(data["t"]))


def project(point, k: Intrinsics) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in point)
    if not z > 0:
        raise DomainError(f"cannot project point with non-positive depth z={z}")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z


def unproject(u: float, v: float, depth: float, k: Intrinsics) -> np.ndarray:
    if not depth > 0:
        raise DomainError(f"cannot unproject non-positive depth {depth}")
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, float(depth)])


def project_points(points, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``project``; returns ``(uv (N, 2), z (N,))`` without depth checks.

    Callers must mask out ``z <= 0`` themselves.
    """
    pts = np.asarray(points, dtype=float)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pts[:, 0] / z + k.cx
        v = k.fy * pts[:, 1] / z + k.cy
    return np.stack([u, v], axis=1), z


def unproject_pixels(u, v, depth, k: Intrinsics) -> np.ndarray:
    """Vectorized ``unproject`` over equally shaped arrays; returns (..., 3)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    depth = np.asarray(depth, dtype=float)
    return np.stack([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth], axis=-1)


def sample_intrinsics(rng: np.random.Generator, width: int, height: int,
                      focal_range=DEFAULT_FOCAL_RANGE) -> Intrinsics:
    """Draw a square-pixel camera with focal ``u * width``, ``u ~ U[low, high]``."""
    low, high = focal_range
    if not (0 < low <= high):
        raise ConfigError(f"invalid focal range {focal_range!r}")
    f = float(rng.uniform(low, high)) * width
    return Intrinsics(f, f, width / 2.0, height / 2.0, int(width), int(height))


def sample_pose(rng: np.random.Generator, max_rotation_deg=DEFAULT_MAX_ROTATION_DEG,
                max_translation_frac=DEFAULT_MAX_TRANSLATION_FRAC,
                median_depth: float = 1.0) -> Pose:
    """Random world-to-camera pose near the identity.

    The rotation has a uniformly distributed axis and an angle uniform in
    ``[0, max_rotation_deg]``; the camera center is uniform in a cube of
    half-width ``max_translation_frac * median_depth``.
    """
    if max_rotation_deg < 0 or max_translation_frac < 0 or median_depth < 0:
        raise ConfigError("pose ranges must be non-negative")
    axis = rng.normal(size=3)
    angle = math.radians(float(rng.uniform(0.0, max_rotation_deg)))
    center = rng.uniform(-1.0, 1.0, size=3) * (max_translation_frac * median_depth)
    if angle == 0.0 and not center.any():
        return Pose.identity()
    q = axis_angle_quat(axis, angle)
    r = _quat_to_matrix(q)
    return Pose.from_quat(q, -(r @ center))


def relative_pose(a: Pose, b: Pose) -> Pose:
    """Transform taking camera-``a`` coordinates to camera-``b`` coordinates."""
    return b.compose(a.inverse())
