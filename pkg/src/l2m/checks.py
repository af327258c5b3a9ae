"""Label soundness checks for generated pairs."""

from __future__ import annotations

import numpy as np

from .synth_warp import WarpField, compute_gt_warp


def bilinear_sample(image, x, y):
    """Bilinearly sample an (H, W) or (H, W, C) array at in-bounds points."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
            + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])


def cycle_errors(sample):
    """Round-trip 1 -> 2 -> 1 error in pixels for every doubly-valid pixel.

    The 2 -> 1 warp is bilinearly sampled at the 1 -> 2 targets; a pixel
    counts when all four taps of the reverse warp are valid.
    """
    k1, k2 = sample.camera1.intrinsics, sample.camera2.intrinsics
    w12 = sample.warp_1to2
    w21, _ = compute_gt_warp(sample.depth2, k2, k1, sample.pose_1to2.inverse(), sample.depth1,
                             _tolerance(sample))
    vs, us = np.nonzero(w12.valid)
    tx, ty = w12.target[vs, us, 0], w12.target[vs, us, 1]
    h, w = w21.valid.shape
    x0 = np.clip(np.floor(tx).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(ty).astype(np.int64), 0, h - 1)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    both = w21.valid[y0, x0] & w21.valid[y0, x1] & w21.valid[y1, x0] & w21.valid[y1, x1]
    back = bilinear_sample(np.nan_to_num(w21.target), tx[both], ty[both])
    err = np.hypot(back[:, 0] - us[both], back[:, 1] - vs[both])
    return err


def _tolerance(sample) -> float:
    return float(sample.provenance.get("occlusion_tolerance", 0.02))


def photometric_mae(sample, mask_holes: bool = True) -> float:
    """Mean |I1 - I2(W(x))| in linear RGB over covisible (and non-hole) pixels."""
    valid = sample.warp_1to2.valid.copy()
    if mask_holes:
        valid &= ~sample.hole_mask
    if not valid.any():
        return float("nan")
    vs, us = np.nonzero(valid)
    t = sample.warp_1to2.target[vs, us]
    warped = bilinear_sample(sample.image2, t[:, 0], t[:, 1])
    return float(np.abs(warped - sample.image1[vs, us]).mean())


def rederive_warp(sample) -> WarpField:
    """Recompute the 1 -> 2 warp from stored depths and cameras, cast as stored."""
    warp, _ = compute_gt_warp(sample.depth1, sample.camera1.intrinsics, sample.camera2.intrinsics,
                              sample.pose_1to2, sample.depth2, _tolerance(sample))
    return WarpField(warp.target.astype(np.float32).astype(np.float64), warp.valid)


def warps_identical(a: WarpField, b: WarpField) -> bool:
    if not np.array_equal(a.valid, b.valid):
        return False
    return bool(np.array_equal(a.target[a.valid], b.target[b.valid]))
