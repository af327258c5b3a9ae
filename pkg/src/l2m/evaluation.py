"""Correspondence accuracy and relative-pose evaluation.

Pose accuracy follows the usual matching-benchmark protocol: estimate an
essential matrix from matches with RANSAC, decompose it into ``(R, t)``,
score the pair by ``max(rotation error, translation direction error)`` and
report the area under the cumulative error curve at 5, 10 and 20 degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Intrinsics
from .errors import DecompositionError, EstimationError, InputError
from .synth_warp import CertaintyMap, WarpField

AUC_THRESHOLDS = (5.0, 10.0, 20.0)
PCK_THRESHOLDS = (1.0, 3.0, 5.0)
RANSAC_THRESHOLD_PX = 0.5
RANSAC_CONFIDENCE = 0.99999
RANSAC_MAX_ITERS = 10_000


@dataclass(frozen=True)
class MatchSet:
    pairs: np.ndarray             # (N, 4) u1, v1, u2, v2 in pixels
    confidence: np.ndarray = None  # (N,) in [0, 1], optional

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(pairs)):
            raise InputError("match coordinates must be finite")
        object.__setattr__(self, "pairs", pairs)
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if len(conf) != len(pairs):
                raise InputError("confidence length does not match the number of matches")
            object.__setattr__(self, "confidence", conf)

    def __len__(self):
        return len(self.pairs)

    def subset(self, mask) -> MatchSet:
        conf = None if self.confidence is None else self.confidence[mask]
        return MatchSet(self.pairs[mask], conf)


@dataclass(frozen=True)
class PoseError:
    rotation_deg: float
    translation_deg: float

    @property
    def combined_deg(self) -> float:
        return max(self.rotation_deg, self.translation_deg)

    def to_dict(self) -> dict:
        return {"rotation_deg": self.rotation_deg, "translation_deg": self.translation_deg,
                "combined_deg": self.combined_deg}


def load_matches(path) -> MatchSet:
    """Read ``u1 v1 u2 v2 [confidence]`` lines; ``#`` starts a comment."""
    rows, conf = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise InputError(f"{path}:{lineno}: expected 4 or 5 columns, got {len(parts)}")
        vals = [float(p) for p in parts]
        rows.append(vals[:4])
        conf.append(vals[4] if len(vals) == 5 else None)
    has_conf = [c is not None for c in conf]
    if any(has_conf) and not all(has_conf):
        raise InputError(f"{path}: confidence column present on some lines only")
    return MatchSet(np.array(rows).reshape(-1, 4), np.array(conf) if rows and all(has_conf) else None)


def save_matches(matches: MatchSet, path) -> None:
    lines = ["# u1 v1 u2 v2" + (" confidence" if matches.confidence is not None else "")]
    for i, row in enumerate(matches.pairs):
        vals = [repr(float(v)) for v in row]
        if matches.confidence is not None:
            vals.append(repr(float(matches.confidence[i])))
        lines.append(" ".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def endpoint_error(pred: WarpField, gt: WarpField, certainty_gt: CertaintyMap, thresholds=PCK_THRESHOLDS):
    """Mean end-point error and PCK over pixels valid in both fields with certainty 1."""
    if pred.valid.shape != gt.valid.shape or certainty_gt.values.shape != gt.valid.shape:
        raise InputError("warp fields and certainty must share dimensions")
    sel = pred.valid & gt.valid & (certainty_gt.values == 1.0)
    if not sel.any():
        raise InputError("no pixels are valid in both warp fields")
    epe = np.linalg.norm(pred.target[sel] - gt.target[sel], axis=1)
    return {"mean_epe": float(epe.mean()), "pck": {float(t): float(np.mean(epe <= t)) for t in thresholds},
            "count": int(sel.sum())}


def normalized_coords(pixels, k: Intrinsics) -> np.ndarray:
    """Pixel coordinates (N, 2) to homogeneous camera rays (N, 3) with z = 1."""
    pix = np.asarray(pixels, dtype=np.float64)
    return np.stack([(pix[:, 0] - k.cx) / k.fx, (pix[:, 1] - k.cy) / k.fy, np.ones(len(pix))], axis=1)


def _hartley(x) -> tuple[np.ndarray, np.ndarray]:
    centroid = x[:, :2].mean(axis=0)
    dist = np.linalg.norm(x[:, :2] - centroid, axis=1).mean()
    s = math.sqrt(2.0) / dist if dist > 0 else 1.0
    t = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return x @ t.T, t


def _canonical_sign(e) -> np.ndarray:
    flat = e.ravel()
    i = int(np.argmax(np.abs(flat)))
    return -e if flat[i] < 0 else e


def project_to_essential(e) -> np.ndarray:
    """Nearest matrix with singular values (1, 1, 0), i.e. Frobenius norm sqrt(2)."""
    u, _, vt = np.linalg.svd(e)
    return _canonical_sign(u @ np.diag([1.0, 1.0, 0.0]) @ vt)


def essential_from_rays(x1, x2) -> np.ndarray:
    """Normalized 8-point estimate from (N, 3) homogeneous rays."""
    if len(x1) < 8:
        raise EstimationError(f"the 8-point algorithm needs at least 8 matches, got {len(x1)}")
    n1, t1 = _hartley(x1)
    n2, t2 = _hartley(x2)
    a = np.einsum("ni,nj->nij", n2, n1).reshape(len(n1), 9)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    # A one-dimensional null space needs the 8th singular value clearly non-zero.
    if len(s) < 8 or s[7] <= 1e-10 * s[0]:
        raise EstimationError("degenerate configuration: epipolar system is rank deficient")
    e = t2.T @ vt[-1].reshape(3, 3) @ t1
    return project_to_essential(e)


def estimate_essential_8pt(matches: MatchSet, k1: Intrinsics, k2: Intrinsics) -> np.ndarray:
    """Essential matrix with ``x2^T E x1 = 0`` for rays of view 1 and view 2."""
    return essential_from_rays(normalized_coords(matches.pairs[:, :2], k1),
                               normalized_coords(matches.pairs[:, 2:], k2))


def sampson_distance(e, x1, x2) -> np.ndarray:
    """First-order epipolar distance (same units as the rays), one value per match."""
    ex1 = x1 @ e.T
    etx2 = x2 @ e
    num = np.einsum("ni,ni->n", x2, ex1)
    den = ex1[:, 0] ** 2 + ex1[:, 1] ** 2 + etx2[:, 0] ** 2 + etx2[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))


def _ransac_iterations(inlier_ratio, sample_size, confidence, cap):
    if inlier_ratio <= 0:
        return cap
    if inlier_ratio >= 1:
        return 1
    denom = math.log(1.0 - inlier_ratio ** sample_size)
    if denom >= 0:
        return cap
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / denom)))


def ransac_essential(matches: MatchSet, k1: Intrinsics, k2: Intrinsics, threshold_px=RANSAC_THRESHOLD_PX,
                     max_iters=RANSAC_MAX_ITERS, confidence=RANSAC_CONFIDENCE, rng=None):
    """Robust essential-matrix fit; returns ``(E, inlier_mask)``.

    Hypotheses come from random 8-match samples. Inliers have Sampson
    distance below ``threshold_px`` divided by the mean focal length of both
    cameras. The winning model is refit on its inliers.
    """
    n = len(matches)
    if n < 8:
        raise EstimationError(f"RANSAC needs at least 8 matches, got {n}")
    rng = np.random.default_rng(rng)
    x1 = normalized_coords(matches.pairs[:, :2], k1)
    x2 = normalized_coords(matches.pairs[:, 2:], k2)
    thr = threshold_px / np.mean([k1.fx, k1.fy, k2.fx, k2.fy])
    best_mask, best_count, best_score = None, -1, np.inf
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            e = essential_from_rays(x1[sample], x2[sample])
        except (EstimationError, np.linalg.LinAlgError):
            continue
        dist = sampson_distance(e, x1, x2)
        mask = dist <= thr
        count = int(mask.sum())
        score = float(np.sum(np.minimum(dist, thr)))
        if count > best_count or (count == best_count and score < best_score):
            best_mask, best_count, best_score = mask, count, score
            needed = _ransac_iterations(count / n, 8, confidence, max_iters)
    if best_mask is None or best_count < 8:
        raise EstimationError(f"no model reached 8 inliers (best {max(best_count, 0)})")
    e = essential_from_rays(x1[best_mask], x2[best_mask])
    mask = sampson_distance(e, x1, x2) <= thr
    for _ in range(3):
        if mask.sum() < 8 or np.array_equal(mask, best_mask):
            break
        best_mask = mask
        e = essential_from_rays(x1[best_mask], x2[best_mask])
        mask = sampson_distance(e, x1, x2) <= thr
    if mask.sum() < 8:
        raise EstimationError("refit model lost its inliers")
    return e, mask


def _midpoint_depths(r, t, x1, x2):
    """Depths of the midpoint triangulation in both cameras for rays x1, x2."""
    d1 = x1
    d2 = x2 @ r  # view-2 rays expressed in camera-1 frame
    c2 = -r.T @ t
    # Solve [d1, -d2] [l1, l2]^T ~= c2 per match in the least-squares sense.
    a11 = np.einsum("ni,ni->n", d1, d1)
    a12 = -np.einsum("ni,ni->n", d1, d2)
    a22 = np.einsum("ni,ni->n", d2, d2)
    b1 = d1 @ c2
    b2 = -(d2 @ c2)
    det = a11 * a22 - a12 * a12
    ok = np.abs(det) > 1e-15
    det = np.where(ok, det, 1.0)
    l1 = (a22 * b1 - a12 * b2) / det
    l2 = (a11 * b2 - a12 * b1) / det
    mid = 0.5 * (d1 * l1[:, None] + (c2 + d2 * l2[:, None]))
    z1 = mid[:, 2]
    z2 = (mid @ r.T + t)[:, 2]
    return np.where(ok, z1, -1.0), np.where(ok, z2, -1.0)


def decompose_essential(e, matches: MatchSet, k1: Intrinsics, k2: Intrinsics):
    """Pick the ``(R, t)`` among the four decompositions that passes cheirality most often."""
    if len(matches) < 1:
        raise DecompositionError("need at least one inlier match")
    u, _, vt = np.linalg.svd(np.asarray(e, dtype=np.float64))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    x1 = normalized_coords(matches.pairs[:, :2], k1)
    x2 = normalized_coords(matches.pairs[:, 2:], k2)
    best, best_count = None, 0
    for r in (u @ w @ vt, u @ w.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            z1, z2 = _midpoint_depths(r, t, x1, x2)
            count = int(np.sum((z1 > 0) & (z2 > 0)))
            if count > best_count:
                best, best_count = (r, t / np.linalg.norm(t)), count
    if best is None:
        raise DecompositionError("no decomposition places points in front of both cameras")
    return best


def rotation_angle_deg(r) -> float:
    cos = (np.trace(r) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def pose_error(r_est, t_est, r_gt, t_gt, eps=1e-6) -> PoseError:
    """Rotation angle and sign-invariant translation direction error, in degrees.

    A ground-truth translation shorter than ``eps`` scores 0 translation error.
    """
    r_err = rotation_angle_deg(np.asarray(r_est) @ np.asarray(r_gt).T)
    t_est = np.asarray(t_est, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    n_est, n_gt = np.linalg.norm(t_est), np.linalg.norm(t_gt)
    if n_gt < eps:
        # Direction is undefined for a pure rotation; only the rotation is scored.
        t_err = 0.0
    elif n_est < eps:
        t_err = 180.0
    else:
        cos = abs(float(t_est @ t_gt)) / (n_est * n_gt)
        t_err = math.degrees(math.acos(min(1.0, cos)))
    return PoseError(r_err, t_err)


def auc(errors, thresholds=AUC_THRESHOLDS) -> dict:
    """Area under the cumulative pose-error curve, in percent, for each threshold.

    ``acc(t)`` is a step function, so the integral is exact:
    ``int_0^tau acc(t) dt = mean(max(0, tau - e_i))``. Failures are ``inf``.
    """
    errs = np.asarray(list(errors), dtype=np.float64)
    if errs.size == 0:
        raise InputError("AUC of an empty error list is undefined")
    if np.any(np.isnan(errs)) or np.any(errs < 0):
        raise InputError("pose errors must be non-negative (use inf for failures)")
    thresholds = [float(t) for t in thresholds]
    if any(t <= 0 for t in thresholds) or thresholds != sorted(thresholds):
        raise InputError("AUC thresholds must be positive and ascending")
    return {t: float(np.mean(np.maximum(0.0, t - errs)) / t * 100.0) for t in thresholds}


def estimate_relative_pose(matches: MatchSet, k1: Intrinsics, k2: Intrinsics, threshold_px=RANSAC_THRESHOLD_PX,
                           rng=None, **ransac_kwargs):
    """RANSAC essential matrix plus decomposition; returns ``(R, t, inlier_mask)``."""
    e, mask = ransac_essential(matches, k1, k2, threshold_px=threshold_px, rng=rng, **ransac_kwargs)
    r, t = decompose_essential(e, matches.subset(mask), k1, k2)
    return r, t, mask


def evaluate_pairs(records, thresholds=AUC_THRESHOLDS, threshold_px=RANSAC_THRESHOLD_PX, seed=0) -> dict:
    """Evaluate ``(pair_id, MatchSet, k1, k2, R_gt, t_gt)`` records into a results dict.

    Each pair is seeded from ``(seed, position)`` so results do not depend on
    evaluation order. Estimation failures count as infinite error.
    """
    per_pair, errs = [], []
    for i, (pair_id, matches, k1, k2, r_gt, t_gt) in enumerate(records):
        rng = np.random.default_rng([seed, i])
        entry = {"pair": pair_id, "matches": len(matches)}
        try:
            r, t, mask = estimate_relative_pose(matches, k1, k2, threshold_px=threshold_px, rng=rng)
        except EstimationError as exc:
            entry.update(status="failed", reason=str(exc), combined_deg=None)
            errs.append(math.inf)
        else:
            err = pose_error(r, t, r_gt, t_gt)
            entry.update(status="ok", inliers=int(mask.sum()), **err.to_dict())
            errs.append(err.combined_deg)
        per_pair.append(entry)
    table = auc(errs, thresholds) if errs else {}
    return {"pairs": per_pair, "auc": {f"auc@{t:g}": v for t, v in table.items()}, "count": len(errs)}


def matches_from_warp(warp: WarpField, count: int | None = None, rng=None) -> MatchSet:
    """Correspondences read off a warp field, optionally subsampled without replacement."""
    vs, us = np.nonzero(warp.valid)
    if count is not None and count < len(vs):
        rng = np.random.default_rng(rng)
        pick = np.sort(rng.choice(len(vs), size=count, replace=False))
        vs, us = vs[pick], us[pick]
    tgt = warp.target[vs, us]
    return MatchSet(np.column_stack([us, vs, tgt[:, 0], tgt[:, 1]]).astype(np.float64))
