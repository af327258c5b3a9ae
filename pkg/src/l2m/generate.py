"""Pair and multi-view synthesis from a single image and its depth.

Image 1 is a forward-warped novel view with disocclusions inpainted; image 2
is a (re)lit render of the lifted mesh from a second camera. World
coordinates are the frame of the lifted source camera.
"""

from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import formats
from .camera import Intrinsics, Pose, relative_pose, sample_intrinsics, sample_pose
from .color import as_float_image, linear_to_srgb, srgb_to_linear
from .config import GenConfig
from .errors import InpaintHookError, L2MError
from .lift import (
    DepthMap,
    PointCloud,
    lift_to_pointcloud,
    sample_scale_shift,
    scale_shift_depth,
    triangulate_depth_grid,
)
from .mesh import TriMesh
from .render import PointLight, rasterize, sample_lights
from .synth_warp import (
    CertaintyMap,
    WarpField,
    compute_gt_warp,
    external_inpaint,
    hole_mask,
    naive_inpaint,
    splat_points,
)

log = logging.getLogger(__name__)


class SampleRejected(L2MError):
    """Degenerate geometry; ``reason`` is a short machine-readable tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> Camera:
        return cls(Intrinsics.from_dict(data["intrinsics"]), Pose.from_dict(data["pose"]))


@dataclass
class PairSample:
    image1: np.ndarray        # (H, W, 3) linear RGB
    image2: np.ndarray        # (H, W, 3) linear RGB
    warp_1to2: WarpField
    certainty: CertaintyMap
    hole_mask: np.ndarray     # (H, W) bool, True = inpainted disocclusion in image 1
    depth1: DepthMap
    depth2: DepthMap
    camera1: Camera
    camera2: Camera
    lights: list
    provenance: dict = field(default_factory=dict)

    @property
    def pose_1to2(self) -> Pose:
        return relative_pose(self.camera1.pose, self.camera2.pose)

    @property
    def covisibility(self) -> float:
        return float(self.certainty.values.mean())


@dataclass
class View:
    image: np.ndarray         # (H, W, 3) linear RGB
    features: object          # FeatureMap slot, filled by an external extractor
    intrinsics: Intrinsics
    pose: Pose
    depth: DepthMap
    hole_mask: np.ndarray


@dataclass
class MultiviewSet:
    source_image: np.ndarray  # resized sRGB source
    source_depth: DepthMap    # after scale/shift augmentation
    intrinsics: Intrinsics
    views: list
    provenance: dict = field(default_factory=dict)


@dataclass
class Scene:
    image: np.ndarray  # sRGB float, resized
    depth: DepthMap    # augmented
    intrinsics: Intrinsics
    cloud: PointCloud
    mesh: TriMesh
    scale_a: float
    shift_b: float

    @property
    def median_depth(self) -> float:
        return self.depth.median()


def resize_and_crop(image, depth: DepthMap, width: int, height: int):
    """Shorter-side resize to cover ``width x height`` then center crop.

    The image is resampled bilinearly and the depth nearest-neighbor (no
    blending across depth edges), both over the same crop window.
    """
    img = as_float_image(image)
    if img.shape[:2] != depth.shape:
        raise SampleRejected("misaligned", f"image {img.shape[:2]} vs depth {depth.shape}")
    h0, w0 = depth.shape
    if (w0, h0) == (width, height):
        return img, depth
    s = max(width / w0, height / h0)
    new_w, new_h = max(width, round(w0 * s)), max(height, round(h0 * s))
    off_x, off_y = (new_w - width) // 2, (new_h - height) // 2
    xs = np.minimum(((np.arange(width) + off_x + 0.5) / s).astype(np.int64), w0 - 1)
    ys = np.minimum(((np.arange(height) + off_y + 0.5) / s).astype(np.int64), h0 - 1)
    box = (off_x / s, off_y / s, (off_x + width) / s, (off_y + height) / s)
    channels = [
        np.asarray(Image.fromarray(img[..., c].astype(np.float32), mode="F").resize(
            (width, height), resample=Image.BILINEAR, box=box))
        for c in range(3)
    ]
    out = np.clip(np.stack(channels, axis=2).astype(np.float64), 0.0, 1.0)
    return out, DepthMap(depth.values[np.ix_(ys, xs)], depth.valid[np.ix_(ys, xs)])


def lift_scene(source_image, source_depth: DepthMap, cfg: GenConfig, rng: np.random.Generator) -> Scene:
    """Resize, augment depth, sample intrinsics and lift to a cloud and mesh."""
    img, depth = resize_and_crop(source_image, source_depth, cfg.width, cfg.height)
    if not depth.valid.any():
        raise SampleRejected("invalid_depth", "no valid depth pixels")
    a, b = sample_scale_shift(rng, depth, cfg.scale_range, cfg.shift_frac)
    depth = scale_shift_depth(depth, a, b)
    if not depth.valid.any():
        raise SampleRejected("invalid_depth", "no valid depth after scale/shift")
    k = sample_intrinsics(rng, cfg.width, cfg.height, cfg.focal_range)
    cloud = lift_to_pointcloud(img, depth, k)
    mesh = triangulate_depth_grid(img, depth, k, cfg.discontinuity_ratio)
    if mesh.is_empty:
        raise SampleRejected("empty_mesh")
    return Scene(img, depth, k, cloud, mesh, a, b)


def inpaint_view(image_linear, coverage, holes, cfg: GenConfig):
    """Fill uncovered pixels; returns ``(image, method)``.

    Small splat gaps (uncovered but not in ``holes``) always use diffusion.
    Disocclusions go to the external command when configured, falling back
    to diffusion if the hook fails. Covered pixels are never modified.
    """
    uncovered = ~coverage
    if not uncovered.any():
        return image_linear.copy(), "none"
    if not cfg.inpaint_cmd or not holes.any():
        return naive_inpaint(image_linear, uncovered, cfg.inpaint_max_iters), "naive"
    gaps = uncovered & ~holes
    img = naive_inpaint(image_linear, gaps, cfg.inpaint_max_iters) if gaps.any() else image_linear.copy()
    try:
        with tempfile.TemporaryDirectory(prefix="l2m-view-") as tmp:
            image_path, mask_path = Path(tmp) / "image.png", Path(tmp) / "mask.png"
            formats.write_image(image_path, linear_to_srgb(img))
            formats.write_mask(mask_path, holes)
            filled = srgb_to_linear(external_inpaint(image_path, mask_path, cfg.inpaint_cmd))
    except InpaintHookError as exc:
        log.warning("external inpainting failed, using diffusion: %s", exc)
        return naive_inpaint(img, holes, cfg.inpaint_max_iters), "naive-fallback"
    return np.where(holes[..., None], filled, img), "external"


def render_novel_view(scene: Scene, pose: Pose, cfg: GenConfig):
    """Image-1 path: splat, hole mask, inpaint; depth from the mesh where it agrees with the splat.

    Returns ``(image_linear, depth, holes, inpaint_method)``.
    """
    k = scene.intrinsics
    splat = splat_points(scene.cloud, k, pose, cfg.splat_radius)
    if splat.is_empty:
        raise SampleRejected("empty_view", "no points project into the novel view")
    holes = hole_mask(splat, cfg.closing_radius)
    image, method = inpaint_view(splat.image, splat.coverage, holes, cfg)
    surface = rasterize(scene.mesh, k, pose, shading="albedo")
    with np.errstate(invalid="ignore"):
        agree = np.abs(splat.depth.values - surface.depth.values) <= cfg.occlusion_tolerance * surface.depth.values
    valid = surface.coverage & splat.coverage & agree
    return image, DepthMap(surface.depth.values, valid), holes, method


def light_box(median_depth: float, distance_range) -> tuple:
    """Light placement box: laterally within half the median depth, in front of the median surface."""
    m = median_depth
    near = max(0.05 * m, m - distance_range[1])
    far = max(near, m - distance_range[0])
    return (-0.5 * m, -0.5 * m, near), (0.5 * m, 0.5 * m, far)


def generate_pair(source_image, source_depth: DepthMap, cfg: GenConfig, sample_seed: int,
                  source_name: str = "") -> PairSample:
    """Synthesize one labelled pair; raises ``SampleRejected`` on degenerate geometry."""
    rng = np.random.default_rng(sample_seed)
    scene = lift_scene(source_image, source_depth, cfg, rng)
    k = scene.intrinsics
    med = scene.median_depth
    pose1 = sample_pose(rng, cfg.max_rotation_deg, cfg.max_translation_frac, med)
    image1, depth1, holes, method = render_novel_view(scene, pose1, cfg)

    pose2 = Pose.identity() if cfg.lock_view2 else sample_pose(rng, cfg.max_rotation_deg,
                                                                 cfg.max_translation_frac, med)
    lights = sample_lights(rng, cfg.light_count, cfg.light_intensity, cfg.light_color,
                           light_box(med, cfg.light_distance))
    render2 = rasterize(scene.mesh, k, pose2, lights, shading=cfg.shading, ambient=cfg.ambient,
                        exposure=cfg.exposure)
    if render2.is_empty:
        raise SampleRejected("empty_view", "mesh does not project into camera 2")

    # Labels are derived from float32-rounded depths so the stored PFMs reproduce them exactly.
    depth1 = depth1.astype32()
    depth2 = render2.depth.astype32()
    warp, certainty = compute_gt_warp(depth1, k, k, relative_pose(pose1, pose2), depth2, cfg.occlusion_tolerance)
    warp = WarpField(warp.target.astype(np.float32).astype(np.float64), warp.valid)
    covis = float(certainty.values.mean())
    if covis < cfg.min_covisibility:
        raise SampleRejected("low_covisibility", f"{covis:.3f} < {cfg.min_covisibility}")
    provenance = {
        "source_image": str(source_name),
        "seed": int(sample_seed),
        "scale_a": float(scene.scale_a),
        "shift_b": float(scene.shift_b),
        "inpaint": method,
        "shading": cfg.shading,
        "occlusion_tolerance": float(cfg.occlusion_tolerance),
    }
    return PairSample(image1, render2.image, warp, certainty, holes, depth1, depth2, Camera(k, pose1),
                      Camera(k, pose2), lights, provenance)


def generate_multiview(source_image, source_depth: DepthMap, cfg: GenConfig, seed: int,
                       source_name: str = "") -> MultiviewSet:
    """Novel views of one lifted scene for feature distillation.

    All views share the scene's intrinsics and scale/shift. With
    ``cfg.identity_first_view`` view 0 is the source camera itself.
    """
    rng = np.random.default_rng(seed)
    scene = lift_scene(source_image, source_depth, cfg, rng)
    views = []
    for i in range(cfg.multiview_count):
        if i == 0 and cfg.identity_first_view:
            pose = Pose.identity()
        else:
            pose = sample_pose(rng, cfg.max_rotation_deg, cfg.max_translation_frac, scene.median_depth)
        image, depth, holes, _ = render_novel_view(scene, pose, cfg)
        views.append(View(image, None, scene.intrinsics, pose, depth.astype32(), holes))
    provenance = {"source_image": str(source_name), "seed": int(seed), "scale_a": float(scene.scale_a),
                  "shift_b": float(scene.shift_b)}
    return MultiviewSet(scene.image, scene.depth, scene.intrinsics, views, provenance)


PAIR_FILES = ("image1.png", "image2.png", "depth1.pfm", "depth2.pfm", "warp_1to2.l2mw", "certainty.png",
              "hole_mask.png", "meta.json")


def pair_sidecar(sample: PairSample, sample_id: str) -> dict:
    h, w = sample.hole_mask.shape
    return {
        "schema_version": formats.SIDECAR_SCHEMA_VERSION,
        "sample_id": sample_id,
        "resolution": [w, h],
        "camera1": sample.camera1.to_dict(),
        "camera2": sample.camera2.to_dict(),
        "relative_pose_1to2": sample.pose_1to2.to_dict(),
        "lights": [light.to_dict() for light in sample.lights],
        "provenance": sample.provenance,
        "stats": {"covisibility": sample.covisibility, "hole_fraction": float(sample.hole_mask.mean())},
    }


def write_pair(sample: PairSample, directory, sample_id: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    formats.write_linear_image(directory / "image1.png", sample.image1)
    formats.write_linear_image(directory / "image2.png", sample.image2)
    formats.write_depth(directory / "depth1.pfm", sample.depth1)
    formats.write_depth(directory / "depth2.pfm", sample.depth2)
    formats.write_warp(directory / "warp_1to2.l2mw", sample.warp_1to2)
    formats.write_certainty(directory / "certainty.png", sample.certainty)
    formats.write_mask(directory / "hole_mask.png", sample.hole_mask)
    meta = pair_sidecar(sample, sample_id)
    formats.validate_sidecar(meta)
    (directory / "meta.json").write_text(formats.dumps_json(meta))


def read_pair(directory) -> PairSample:
    directory = Path(directory)
    meta = formats.load_json(directory / "meta.json")
    formats.validate_sidecar(meta)
    return PairSample(
        image1=srgb_to_linear(formats.read_image(directory / "image1.png")),
        image2=srgb_to_linear(formats.read_image(directory / "image2.png")),
        warp_1to2=formats.read_warp(directory / "warp_1to2.l2mw"),
        certainty=formats.read_certainty(directory / "certainty.png"),
        hole_mask=formats.read_mask(directory / "hole_mask.png") > 0.5,
        depth1=formats.read_depth(directory / "depth1.pfm"),
        depth2=formats.read_depth(directory / "depth2.pfm"),
        camera1=Camera.from_dict(meta["camera1"]),
        camera2=Camera.from_dict(meta["camera2"]),
        lights=[PointLight.from_dict(d) for d in meta["lights"]],
        provenance=meta["provenance"],
    )


def write_multiview(mv: MultiviewSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    formats.write_image(directory / "source.png", mv.source_image)
    formats.write_depth(directory / "source_depth.pfm", mv.source_depth)
    views = []
    for i, view in enumerate(mv.views):
        formats.write_linear_image(directory / f"view_{i:02d}.png", view.image)
        formats.write_depth(directory / f"view_{i:02d}_depth.pfm", view.depth)
        formats.write_mask(directory / f"view_{i:02d}_holes.png", view.hole_mask)
        views.append({"image": f"view_{i:02d}.png", "features": f"view_{i:02d}.l2mf",
                      "pose": view.pose.to_dict()})
    meta = {"schema_version": formats.SIDECAR_SCHEMA_VERSION, "intrinsics": mv.intrinsics.to_dict(),
            "views": views, "provenance": mv.provenance}
    (directory / "meta.json").write_text(formats.dumps_json(meta))
