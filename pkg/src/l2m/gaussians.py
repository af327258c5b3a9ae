"""3D feature Gaussians: projection, alpha-blended rendering and feature distillation.

With geometry held fixed, the rendered feature at pixel ``p`` is a linear
function of the per-Gaussian features, ``F[p] = sum_i W[p, i] f_i`` with
``W[p, i] = alpha_i(p) * prod_{j before i} (1 - alpha_j(p))``. Rendering and
fitting both go through that sparse weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import sparse

from .camera import Intrinsics, Pose
from .errors import InputError
from .lift import PointCloud

COV_REGULARIZATION = 0.3
FOOTPRINT_CUTOFF = 3.0
MIN_TRANSMITTANCE = 1e-4
DEFAULT_FEATURE_DIM = 16
DEFAULT_INIT_OPACITY = 0.8


@dataclass(frozen=True)
class FeatureMap:
    values: np.ndarray  # (H, W, C)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[..., None]
        if values.ndim != 3:
            raise InputError(f"feature map must be (H, W, C), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("feature map contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class Gaussian3D:
    mu: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    sh: np.ndarray           # degree-0 color, linear RGB
    feature: np.ndarray


@dataclass(frozen=True)
class SplatFootprint:
    center: np.ndarray      # (2,) pixels
    covariance: np.ndarray  # (2, 2) pixels^2
    depth: float


@dataclass(frozen=True)
class GaussianSet:
    """Structure-of-arrays storage for ``N`` Gaussians sharing feature dimension ``d``."""

    mu: np.ndarray           # (N, 3)
    scale: np.ndarray        # (N, 3)
    orientation: np.ndarray  # (N, 4)
    opacity: np.ndarray      # (N,)
    sh: np.ndarray           # (N, 3)
    features: np.ndarray     # (N, d)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1, 3)
        n = len(mu)
        scale = np.asarray(self.scale, dtype=np.float64).reshape(n, 3)
        quat = np.asarray(self.orientation, dtype=np.float64).reshape(n, 4)
        opacity = np.asarray(self.opacity, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64).reshape(n, 3)
        features = np.asarray(self.features, dtype=np.float64).reshape(n, -1) if n else \
            np.asarray(self.features, dtype=np.float64).reshape(0, -1)
        if np.any(scale <= 0):
            raise InputError("Gaussian scales must be positive")
        if np.any((opacity < 0) | (opacity > 1)):
            raise InputError("Gaussian opacity must lie in [0, 1]")
        norms = np.linalg.norm(quat, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InputError("Gaussian orientations must be unit quaternions")
        for name, value in (("mu", mu), ("scale", scale), ("orientation", quat / norms[:, None] if n else quat),
                            ("opacity", opacity), ("sh", sh), ("features", features)):
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.mu)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __getitem__(self, i) -> Gaussian3D:
        return Gaussian3D(self.mu[i], self.scale[i], self.orientation[i], float(self.opacity[i]),
                          self.sh[i], self.features[i])

    def with_features(self, features) -> GaussianSet:
        return replace(self, features=np.asarray(features, dtype=np.float64).reshape(len(self), -1))

    def with_colors(self, sh) -> GaussianSet:
        return replace(self, sh=np.asarray(sh, dtype=np.float64).reshape(len(self), 3))

    @classmethod
    def from_list(cls, gaussians) -> GaussianSet:
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(0)
        return cls(
            np.array([g.mu for g in gaussians]),
            np.array([g.scale for g in gaussians]),
            np.array([g.orientation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.array([g.sh for g in gaussians]),
            np.array([np.atleast_1d(g.feature) for g in gaussians]),
        )

    @classmethod
    def empty(cls, dim: int) -> GaussianSet:
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)),
                   np.zeros((0, dim)))


def _quats_to_matrices(q) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=1),
    ], axis=1)


def covariance_3d(scale, orientation) -> np.ndarray:
    """World-frame covariances ``R diag(s^2) R^T`` for (N, 3) scales and (N, 4) quaternions."""
    r = _quats_to_matrices(np.asarray(orientation, dtype=np.float64).reshape(-1, 4))
    s2 = np.asarray(scale, dtype=np.float64).reshape(-1, 3) ** 2
    return np.einsum("nij,nj,nkj->nik", r, s2, r)


def project_gaussians(gs: GaussianSet, k: Intrinsics, pose: Pose, regularization=COV_REGULARIZATION):
    """Affine (EWA) projection of every Gaussian.

    Returns ``(centers (N, 2), covariances (N, 2, 2), depths (N,), visible (N,))``;
    entries for Gaussians with camera depth <= 0 are not meaningful.
    """
    cam = pose.transform(gs.mu) if len(gs) else np.zeros((0, 3))
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    visible = z > 0
    zs = np.where(visible, z, 1.0)
    centers = np.stack([k.fx * x / zs + k.cx, k.fy * y / zs + k.cy], axis=1)
    jac = np.zeros((len(gs), 2, 3))
    jac[:, 0, 0] = k.fx / zs
    jac[:, 0, 2] = -k.fx * x / zs ** 2
    jac[:, 1, 1] = k.fy / zs
    jac[:, 1, 2] = -k.fy * y / zs ** 2
    w = pose.rotation
    cov_cam = np.einsum("ij,njk,lk->nil", w, covariance_3d(gs.scale, gs.orientation), w)
    cov2 = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac) + regularization * np.eye(2)
    return centers, cov2, z, visible


def project_gaussian(g: Gaussian3D, k: Intrinsics, pose: Pose,
                     regularization=COV_REGULARIZATION) -> SplatFootprint | None:
    """Image-plane footprint of one Gaussian, or ``None`` when it is behind the camera."""
    gs = GaussianSet.from_list([g])
    centers, covs, depths, visible = project_gaussians(gs, k, pose, regularization)
    if not visible[0]:
        return None
    return SplatFootprint(centers[0], covs[0], float(depths[0]))


@numba.njit(cache=True)
def _composite_kernel(order, centers, conics, radii, opacity, width, height, cutoff2, t_min, early_stop,
                      frag_pixel, frag_gauss, frag_weight):
    trans = np.ones(width * height)
    n_frag = 0
    for oi in range(order.shape[0]):
        g = order[oi]
        cx = centers[g, 0]
        cy = centers[g, 1]
        r = radii[g]
        x0 = max(0, int(np.ceil(cx - r)))
        x1 = min(width - 1, int(np.floor(cx + r)))
        y0 = max(0, int(np.ceil(cy - r)))
        y1 = min(height - 1, int(np.floor(cy + r)))
        a = conics[g, 0]
        b = conics[g, 1]
        c = conics[g, 2]
        for py in range(y0, y1 + 1):
            dy = py - cy
            for px in range(x0, x1 + 1):
                dx = px - cx
                m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if m > cutoff2:
                    continue
                p = py * width + px
                t = trans[p]
                if early_stop and t < t_min:
                    continue
                alpha = opacity[g] * np.exp(-0.5 * m)
                wgt = alpha * t
                trans[p] = t * (1.0 - alpha)
                if wgt > 0.0:
                    frag_pixel[n_frag] = p
                    frag_gauss[n_frag] = g
                    frag_weight[n_frag] = wgt
                    n_frag += 1
    return n_frag


def draw_order(depths, visible) -> np.ndarray:
    """Visible Gaussian indices front to back; equal depths keep index order."""
    idx = np.nonzero(visible)[0]
    return idx[np.argsort(depths[idx], kind="stable")]


def compositing_weights(gs: GaussianSet, k: Intrinsics, pose: Pose, width=None, height=None,
                        cutoff=FOOTPRINT_CUTOFF, min_transmittance=MIN_TRANSMITTANCE, early_stop=True,
                        regularization=COV_REGULARIZATION) -> sparse.csr_matrix:
    """Sparse ``(H*W, N)`` matrix of per-pixel compositing weights."""
    width = k.width if width is None else int(width)
    height = k.height if height is None else int(height)
    centers, covs, depths, visible = project_gaussians(gs, k, pose, regularization)
    order = draw_order(depths, visible)
    det = covs[:, 0, 0] * covs[:, 1, 1] - covs[:, 0, 1] ** 2
    det = np.where(det > 0, det, 1.0)
    conics = np.stack([covs[:, 1, 1] / det, -covs[:, 0, 1] / det, covs[:, 0, 0] / det], axis=1)
    tr = covs[:, 0, 0] + covs[:, 1, 1]
    lam_max = 0.5 * tr + np.sqrt(np.maximum(0.25 * tr ** 2 - det, 0.0))
    radii = cutoff * np.sqrt(lam_max)
    if len(order):
        r = radii[order]
        span_x = np.minimum(2 * r + 1, width + 1)
        span_y = np.minimum(2 * r + 1, height + 1)
        cap = int(np.sum(np.ceil(span_x) * np.ceil(span_y))) + 1
    else:
        cap = 1
    frag_pixel = np.empty(cap, dtype=np.int64)
    frag_gauss = np.empty(cap, dtype=np.int64)
    frag_weight = np.empty(cap, dtype=np.float64)
    n = _composite_kernel(order.astype(np.int64), np.ascontiguousarray(centers), np.ascontiguousarray(conics),
                          radii, gs.opacity, width, height, cutoff * cutoff, min_transmittance, early_stop,
                          frag_pixel, frag_gauss, frag_weight)
    return sparse.csr_matrix((frag_weight[:n], (frag_pixel[:n], frag_gauss[:n])), shape=(width * height, len(gs)))


@dataclass(frozen=True)
class FeatureRender:
    features: FeatureMap
    alpha: np.ndarray  # (H, W) accumulated opacity
    color: np.ndarray  # (H, W, 3)


def render_features(gs: GaussianSet, k: Intrinsics, pose: Pose, width=None, height=None,
                    **kwargs) -> FeatureRender:
    """Alpha-blend features and colors front to back over a zero background."""
    width = k.width if width is None else int(width)
    height = k.height if height is None else int(height)
    wmat = compositing_weights(gs, k, pose, width, height, **kwargs)
    feats = (wmat @ gs.features).reshape(height, width, gs.dim)
    alpha = np.asarray(wmat.sum(axis=1)).reshape(height, width)
    color = (wmat @ gs.sh).reshape(height, width, 3)
    return FeatureRender(FeatureMap(feats), alpha, color)


def init_gaussians_from_cloud(cloud: PointCloud, features: FeatureMap, k: Intrinsics, stride: int = 1,
                              init_opacity: float = DEFAULT_INIT_OPACITY, d: int | None = None) -> GaussianSet:
    """Seed one isotropic Gaussian per point whose source pixel lies on the stride grid.

    ``k`` is the camera the cloud was lifted with; each scale is the
    back-projected footprint ``stride * z / fx``. ``features`` may have a
    lower resolution than the image, in which case it is sampled nearest.
    """
    if stride < 1:
        raise InputError(f"stride must be >= 1, got {stride}")
    if d is not None and features.channels != d:
        raise InputError(f"feature map has {features.channels} channels, expected {d}")
    if len(cloud) == 0:
        return GaussianSet.empty(features.channels)
    u, v = cloud.source_pixel[:, 0], cloud.source_pixel[:, 1]
    pick = (u % stride == 0) & (v % stride == 0)
    u, v = u[pick], v[pick]
    pts = cloud.points[pick]
    fu = np.minimum(u * features.width // k.width, features.width - 1)
    fv = np.minimum(v * features.height // k.height, features.height - 1)
    n = len(pts)
    scale = np.repeat((stride * pts[:, 2] / k.fx)[:, None], 3, axis=1)
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianSet(pts, scale, quat, np.full(n, float(init_opacity)), cloud.colors[pick],
                       features.values[fv, fu])


@dataclass
class FitResult:
    values: np.ndarray               # (N, C) fitted per-Gaussian vectors
    residual_history: list = field(default_factory=list)
    unseen: np.ndarray = None        # (N,) bool, Gaussians with zero total weight
    iterations: int = 0
    converged: bool = False


def cgls(a, b, x0, max_iters=200, tol=1e-10):
    """Jacobi-preconditioned CGLS for ``min ||a x - b||`` with one column of ``b`` per channel.

    Columns of ``a`` with zero norm are left at ``x0``. The residual history
    (Frobenius norm over channels) is non-increasing: iteration stops if a
    step would not reduce it.
    """
    a = sparse.csr_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    b2 = b.reshape(len(b), -1)
    x = np.array(x0, dtype=np.float64).reshape(a.shape[1], -1)
    col_norm = np.sqrt(np.asarray(a.multiply(a).sum(axis=0))).ravel()
    active = col_norm > 0
    scale = np.zeros_like(col_norm)
    scale[active] = 1.0 / col_norm[active]
    a_pre = a @ sparse.diags(scale)
    # Work in y = diag(col_norm) x so that a_pre y = a x.
    y = x * col_norm[:, None]
    r = b2 - a @ x
    s = a_pre.T @ r
    p = s.copy()
    gamma = np.sum(s * s, axis=0)
    gamma0 = gamma.copy()
    history = [float(np.linalg.norm(r))]
    iters = 0
    converged = bool(np.all(gamma <= (tol ** 2) * np.maximum(gamma0, 1e-300))) or not np.any(gamma > 0)
    while not converged and iters < max_iters:
        q = a_pre @ p
        qq = np.sum(q * q, axis=0)
        step = np.where(qq > 0, gamma / np.where(qq > 0, qq, 1.0), 0.0)
        y_new = y + p * step
        r_new = r - q * step
        res = float(np.linalg.norm(r_new))
        if res > history[-1]:
            break
        y, r = y_new, r_new
        history.append(res)
        iters += 1
        s = a_pre.T @ r
        gamma_new = np.sum(s * s, axis=0)
        beta = np.where(gamma > 0, gamma_new / np.where(gamma > 0, gamma, 1.0), 0.0)
        p = s + p * beta
        gamma = gamma_new
        converged = bool(np.all(gamma <= (tol ** 2) * np.maximum(gamma0, 1e-300)))
    x = x.copy()
    x[active] = y[active] / col_norm[active, None]
    return x, history, ~active, iters, converged


def fit_features(gs: GaussianSet, targets, max_iters: int = 200, tol: float = 1e-10,
                 channel: str = "feature") -> FitResult:
    """Least-squares distillation of per-Gaussian vectors with geometry frozen.

    ``targets`` is a sequence of ``(FeatureMap, Intrinsics, Pose)``. With
    ``channel="feature"`` the features are fitted (initialized from ``gs``);
    ``channel="sh"`` fits the degree-0 colors with the same machinery.
    """
    targets = list(targets)
    if not targets:
        raise InputError("fit_features needs at least one target view")
    init = gs.features if channel == "feature" else gs.sh if channel == "sh" else None
    if init is None:
        raise InputError(f"unknown channel {channel!r}")
    dims = {t[0].channels for t in targets}
    if dims != {init.shape[1]}:
        raise InputError(f"target channels {sorted(dims)} do not match Gaussian dimension {init.shape[1]}")
    blocks, rhs = [], []
    for fmap, k, pose in targets:
        blocks.append(compositing_weights(gs, k, pose, fmap.width, fmap.height))
        rhs.append(fmap.values.reshape(-1, fmap.channels))
    a = sparse.vstack(blocks).tocsr()
    b = np.concatenate(rhs, axis=0)
    values, history, unseen, iters, converged = cgls(a, b, init, max_iters=max_iters, tol=tol)
    return FitResult(values, history, unseen, iters, converged)


def feature_l1_loss(rendered, target, mask=None) -> float:
    """Mean absolute difference over masked pixels and all channels."""
    r = rendered.values if isinstance(rendered, FeatureMap) else np.asarray(rendered, dtype=np.float64)
    t = target.values if isinstance(target, FeatureMap) else np.asarray(target, dtype=np.float64)
    if r.shape != t.shape:
        raise InputError(f"feature map shapes differ: {r.shape} vs {t.shape}")
    if r.ndim == 2:
        r, t = r[..., None], t[..., None]
    m = np.ones(r.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != r.shape[:2]:
        raise InputError("mask shape does not match feature maps")
    if not m.any():
        raise InputError("L1 loss over an empty mask is undefined")
    return float(np.mean(np.abs(r[m] - t[m])))
