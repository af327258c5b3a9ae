"""Novel-view forward warping, hole masks, inpainting and ground-truth warps."""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse

from .camera import Intrinsics, Pose, project_points, unproject_pixels
from .errors import InpaintError, InpaintHookError, InputError
from .lift import DepthMap, PointCloud

DEFAULT_SPLAT_RADIUS = 1
DEFAULT_CLOSING_RADIUS = 1
DEFAULT_OCCLUSION_TOLERANCE = 0.02
INPAINT_ENV_VAR = "L2M_INPAINT_CMD"
BOUNDS_EPS = 1e-6


@dataclass(frozen=True)
class WarpField:
    target: np.ndarray  # (H, W, 2) float64 (x, y) in the partner image; NaN where invalid
    valid: np.ndarray   # (H, W) bool

    def __post_init__(self):
        target = np.array(self.target, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if target.shape != valid.shape + (2,):
            raise InputError(f"warp target shape {target.shape} does not match mask {valid.shape}")
        valid = valid & np.isfinite(target).all(axis=2)
        target[~valid] = np.nan
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @classmethod
    def identity(cls, height: int, width: int) -> WarpField:
        vs, us = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(np.stack([us, vs], axis=2), np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class CertaintyMap:
    values: np.ndarray  # (H, W) in [0, 1]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or np.any(values < 0) or np.any(values > 1):
            raise InputError("certainty must be a 2-D array with values in [0, 1]")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class SplatResult:
    image: np.ndarray        # (H, W, 3) linear RGB, zero where uncovered
    depth: DepthMap
    coverage: np.ndarray     # (H, W) bool
    point_index: np.ndarray  # (H, W) int64, -1 where uncovered

    @property
    def is_empty(self) -> bool:
        return not self.coverage.any()


def splat_points(cloud: PointCloud, k2: Intrinsics, pose12: Pose,
                 splat_radius: int = DEFAULT_SPLAT_RADIUS) -> SplatResult:
    """Forward-splat a point cloud into camera ``(k2, pose12)`` with a z-buffer.

    Each point covers the square of half-width ``splat_radius`` around its
    nearest pixel. A pixel keeps the smallest-depth point, ties going to the
    lowest point index. Points at or behind the camera plane are dropped.
    """
    if splat_radius < 0:
        raise InputError(f"splat radius must be non-negative, got {splat_radius}")
    r = int(splat_radius)
    h, w = k2.height, k2.width
    image = np.zeros((h, w, 3))
    depth = np.full((h, w), np.nan)
    index = np.full((h, w), -1, dtype=np.int64)
    if len(cloud):
        pts = pose12.transform(cloud.points)
        uv, z = project_points(pts, k2)
        cu = np.floor(uv[:, 0] + 0.5)
        cv = np.floor(uv[:, 1] + 0.5)
        keep = (z > 0) & np.isfinite(cu) & np.isfinite(cv)
        keep &= (cu >= -r) & (cu <= w - 1 + r) & (cv >= -r) & (cv <= h - 1 + r)
        ids = np.nonzero(keep)[0]
        cu = cu[ids].astype(np.int64)
        cv = cv[ids].astype(np.int64)
        zs = z[ids]
        offsets = np.arange(-r, r + 1)
        dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
        px = (cu[:, None] + dx.ravel()[None, :]).ravel()
        py = (cv[:, None] + dy.ravel()[None, :]).ravel()
        pid = np.repeat(ids, dx.size)
        pz = np.repeat(zs, dx.size)
        inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        px, py, pid, pz = px[inside], py[inside], pid[inside], pz[inside]
        pixel = py * w + px
        order = np.lexsort((pid, pz, pixel))
        pixel, pid, pz = pixel[order], pid[order], pz[order]
        first = np.ones(len(pixel), dtype=bool)
        first[1:] = pixel[1:] != pixel[:-1]
        pixel, pid, pz = pixel[first], pid[first], pz[first]
        image.reshape(-1, 3)[pixel] = cloud.colors[pid]
        depth.reshape(-1)[pixel] = pz
        index.reshape(-1)[pixel] = pid
    coverage = index >= 0
    return SplatResult(image, DepthMap(depth, coverage), coverage, index)


def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def close_mask(mask, radius: int) -> np.ndarray:
    """Morphological closing with a square element; the image border does not erode."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    st = _square(int(radius))
    dilated = ndimage.binary_dilation(mask, structure=st, border_value=0)
    return ndimage.binary_erosion(dilated, structure=st, border_value=1) | mask


def hole_mask(s: SplatResult, closing_radius: int = DEFAULT_CLOSING_RADIUS) -> np.ndarray:
    """Pixels with no projected surface after closing small splat gaps (True = hole)."""
    return ~close_mask(s.coverage, closing_radius)


def _neighbor_table(mask):
    """Flat indices of the 4-neighbors of every masked pixel; -1 marks off-image slots."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    table = np.full((len(ys), 4), -1, dtype=np.int64)
    for j, (dy, dx) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        ny, nx = ys + dy, xs + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        table[inside, j] = ny[inside] * w + nx[inside]
    return ys * w + xs, table


def naive_inpaint(image, mask, max_iters: int = 500, tol: float = 1e-4) -> np.ndarray:
    """Fill ``mask`` by neighbor-mean diffusion; unmasked pixels are returned bit-exact.

    Holes are first seeded front by front from already known neighbors, then
    relaxed with Jacobi sweeps until the largest update drops below ``tol``.
    Work is proportional to the number of masked pixels.
    """
    img = np.array(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise InputError(f"mask {mask.shape} does not match image {img.shape[:2]}")
    if not mask.any():
        return img[..., 0] if squeeze else img
    if mask.all():
        raise InpaintError("cannot inpaint a fully masked image")
    h, w, c = img.shape
    flat = img.reshape(h * w, c)
    idx, table = _neighbor_table(mask)
    inside = table >= 0
    safe = np.where(inside, table, 0)
    known = ~mask.reshape(-1)
    pending = np.ones(len(idx), dtype=bool)
    while pending.any():
        nk = inside & known[safe]
        count = nk.sum(axis=1)
        front = pending & (count > 0)
        total = np.einsum("mk,mkc->mc", nk[front].astype(np.float64), flat[safe[front]])
        flat[idx[front]] = total / count[front, None]
        known[idx[front]] = True
        pending &= ~front
    # Jacobi on the masked unknowns only: x <- A x + b, where b collects the fixed known neighbors.
    pos = np.full(h * w, -1, dtype=np.int64)
    pos[idx] = np.arange(len(idx))
    rows = np.repeat(np.arange(len(idx)), 4)[inside.ravel()]
    cols = table[inside]
    weights = (1.0 / inside.sum(axis=1))[rows]
    unknown_col = pos[cols] >= 0
    a = sparse.csr_matrix((weights[unknown_col], (rows[unknown_col], pos[cols[unknown_col]])),
                          shape=(len(idx), len(idx)))
    b = sparse.csr_matrix((weights[~unknown_col], (rows[~unknown_col], cols[~unknown_col])),
                          shape=(len(idx), h * w)) @ flat
    x = flat[idx]
    for _ in range(max_iters):
        update = a @ x + b
        change = np.max(np.abs(update - x))
        x = update
        if change < tol:
            break
    flat[idx] = x
    return img[..., 0] if squeeze else img


def external_inpaint(image_path, mask_path, command_template: str | None = None,
                     out_path=None, timeout: float | None = None) -> np.ndarray:
    """Run an external inpainting command and read back its output as float sRGB.

    ``command_template`` may use ``{image}``, ``{mask}`` and ``{out}``
    placeholders; it defaults to ``$L2M_INPAINT_CMD``.
    """
    from PIL import Image

    from .color import as_float_image

    template = command_template or os.environ.get(INPAINT_ENV_VAR)
    if not template:
        raise InpaintHookError("no inpainting command configured")
    with tempfile.TemporaryDirectory(prefix="l2m-inpaint-") as tmp:
        out = Path(out_path) if out_path is not None else Path(tmp) / "out.png"
        subs = {"image": str(image_path), "mask": str(mask_path), "out": str(out)}
        try:
            argv = [tok.format(**subs) for tok in shlex.split(template)]
        except (KeyError, IndexError, ValueError) as exc:
            raise InpaintHookError(f"bad inpaint command template {template!r}: {exc}") from exc
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise InpaintHookError(f"inpaint command failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise InpaintHookError(f"inpaint command exited with status {proc.returncode}", proc.stderr)
        if not out.exists():
            raise InpaintHookError(f"inpaint command produced no output at {out}", proc.stderr)
        with Image.open(image_path) as src:
            expected = src.size
        with Image.open(out) as res:
            if res.size != expected:
                raise InpaintHookError(f"inpaint output size {res.size} does not match input {expected}")
            return as_float_image(np.asarray(res.convert("RGB")))


def bilinear_depth(depth: DepthMap, x, y):
    """Bilinearly sample ``depth`` at in-bounds points; returns (values, ok).

    A sample is ok only when every tap with non-zero weight is valid.
    """
    h, w = depth.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    vals = np.zeros(x.shape)
    ok = np.ones(x.shape, dtype=bool)
    for xi, yi, wt in ((x0, y0, (1 - fx) * (1 - fy)), (x1, y0, fx * (1 - fy)),
                       (x0, y1, (1 - fx) * fy), (x1, y1, fx * fy)):
        used = wt > 0
        tap_ok = depth.valid[yi, xi]
        ok &= ~used | tap_ok
        vals += np.where(used & tap_ok, wt * np.nan_to_num(depth.values[yi, xi]), 0.0)
    return vals, ok


def compute_gt_warp(depth1: DepthMap, k1: Intrinsics, k2: Intrinsics, pose12: Pose,
                    depth2: DepthMap, occlusion_tolerance: float = DEFAULT_OCCLUSION_TOLERANCE):
    """Dense view-1 to view-2 correspondences with binary covisibility certainty.

    A pixel is valid when its lifted point lands inside image 2 in front of
    camera 2 and is not deeper than ``depth2`` (bilinear) by more than the
    relative ``occlusion_tolerance``.
    """
    if depth1.shape != k1.shape or depth2.shape != k2.shape:
        raise InputError("depth maps must match their cameras' image sizes")
    h, w = depth1.shape
    vs, us = np.nonzero(depth1.valid)
    pts = pose12.transform(unproject_pixels(us, vs, depth1.values[vs, us], k1))
    uv, z = project_points(pts, k2)
    eps = BOUNDS_EPS
    with np.errstate(invalid="ignore"):
        ok = (z > 0) & (uv[:, 0] >= -eps) & (uv[:, 0] <= k2.width - 1 + eps)
        ok &= (uv[:, 1] >= -eps) & (uv[:, 1] <= k2.height - 1 + eps)
    # Border pixels round-trip through project/unproject with ulp-level error.
    uv[:, 0] = np.clip(uv[:, 0], 0.0, k2.width - 1)
    uv[:, 1] = np.clip(uv[:, 1], 0.0, k2.height - 1)
    sampled = np.zeros(len(z))
    tap_ok = np.zeros(len(z), dtype=bool)
    sampled[ok], tap_ok[ok] = bilinear_depth(depth2, uv[ok, 0], uv[ok, 1])
    ok &= tap_ok
    ok &= z <= sampled * (1.0 + occlusion_tolerance)
    target = np.full((h, w, 2), np.nan)
    valid = np.zeros((h, w), dtype=bool)
    target[vs[ok], us[ok]] = uv[ok]
    valid[vs[ok], us[ok]] = True
    return WarpField(target, valid), CertaintyMap(valid.astype(np.float64))
