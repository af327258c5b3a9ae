"""Command-line entry point: ``l2m <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import formats
from .camera import Intrinsics, Pose
from .color import linear_to_srgb
from .config import GenConfig
from .errors import InputError, L2MError
from .gaussians import FeatureMap, fit_features, init_gaussians_from_cloud, render_features
from .generate import Camera, read_pair
from .lift import lift_to_pointcloud
from .pipeline import run_generation, scan_corpus
from .synth_warp import INPAINT_ENV_VAR

log = logging.getLogger("l2m")


def _config(args) -> GenConfig:
    cfg = GenConfig.from_file(args.config) if args.config else GenConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    inpaint = args.inpaint_cmd or os.environ.get(INPAINT_ENV_VAR)
    if inpaint:
        changes["inpaint_cmd"] = inpaint
    return cfg.replace(**changes) if changes else cfg


def cmd_scan(args) -> int:
    scan = scan_corpus(args.roots, args.out, depth_dirname=args.depth_dir)
    print(f"{len(scan.pairs)} pairs, {len(scan.skipped)} skipped -> {args.out}")
    if scan.warning:
        print(f"warning: {scan.warning}", file=sys.stderr)
    return 0


def _generate(args, mode) -> int:
    cfg = _config(args)
    summary = run_generation(args.manifest, cfg, args.out, jobs=args.jobs, resume=args.resume, mode=mode)
    rejected = sum(summary["rejected"].values())
    print(f"accepted {summary['accepted']}, rejected {rejected}, resumed {summary['resumed']} "
          f"in {summary['wall_time_s']:.1f}s")
    return 0


def cmd_fit(args) -> int:
    root = Path(args.multiview)
    meta = formats.load_json(root / "meta.json")
    k = Intrinsics.from_dict(meta["intrinsics"])
    feature_dir = Path(args.features) if args.features else root
    targets = []
    for view in meta["views"]:
        path = feature_dir / view["features"]
        if not path.is_file():
            log.warning("missing feature map %s, view skipped", path)
            continue
        fmap = formats.read_feature_map(path)
        targets.append((fmap, k.scaled(fmap.width, fmap.height), Pose.from_dict(view["pose"])))
    if not targets:
        raise InputError(f"no feature maps found for {root}")
    image = formats.read_image(root / "source.png")
    depth = formats.read_depth(root / "source_depth.pfm")
    cloud = lift_to_pointcloud(image, depth, k)
    dim = targets[0][0].channels
    # Seed features from a view at the source camera when there is one.
    seed_map = next((f for f, _, p in targets if p == Pose.identity()), FeatureMap(np.zeros((1, 1, dim))))
    gs = init_gaussians_from_cloud(cloud, seed_map, k, stride=args.stride)
    result = fit_features(gs, targets, max_iters=args.max_iters)
    gs = gs.with_features(result.values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_gaussians(out, gs)
    losses = [render_features(gs, kk, pose, fmap.width, fmap.height) for fmap, kk, pose in targets]
    report = {
        "gaussians": len(gs),
        "dim": gs.dim,
        "views": len(targets),
        "iterations": result.iterations,
        "converged": result.converged,
        "unseen": int(result.unseen.sum()),
        "residual_history": result.residual_history,
        "l1_per_view": [float(np.mean(np.abs(r.features.values - f.values))) for r, (f, _, _) in zip(losses, targets)],
    }
    formats.write_json(out.with_suffix(".json"), report)
    print(f"{len(gs)} Gaussians fitted over {len(targets)} views in {result.iterations} iterations -> {out}")
    return 0


def cmd_render(args) -> int:
    gs = formats.read_gaussians(args.gaussians)
    cam = Camera.from_dict(formats.load_json(args.camera))
    res = render_features(gs, cam.intrinsics, cam.pose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_feature_map(out / "features.l2mf", res.features)
    formats.write_image(out / "color.png", linear_to_srgb(np.clip(res.color, 0.0, 1.0)))
    formats.write_mask(out / "alpha.png", np.clip(res.alpha, 0.0, 1.0))
    print(f"rendered {cam.intrinsics.width}x{cam.intrinsics.height} -> {out}")
    return 0


def _pair_dirs(root: Path) -> list:
    if (root / "meta.json").is_file():
        return [root]
    return sorted(p for p in root.iterdir() if (p / "meta.json").is_file() and not p.name.startswith("."))


def cmd_eval(args) -> int:
    from .evaluation import evaluate_pairs, load_matches, matches_from_warp

    records = []
    for i, pair_dir in enumerate(_pair_dirs(Path(args.pairs))):
        sample = read_pair(pair_dir)
        if args.gt_matches is not None:
            rng = np.random.default_rng([args.seed or 0, i])
            matches = matches_from_warp(sample.warp_1to2, args.gt_matches, rng)
        else:
            path = Path(args.matches) / f"{pair_dir.name}.txt"
            if not path.is_file():
                raise InputError(f"missing match file {path}")
            matches = load_matches(path)
        rel = sample.pose_1to2
        records.append((pair_dir.name, matches, sample.camera1.intrinsics, sample.camera2.intrinsics,
                        rel.rotation, rel.translation))
    if not records:
        raise InputError(f"no pairs found under {args.pairs}")
    results = evaluate_pairs(records, threshold_px=args.threshold, seed=args.seed or 0)
    formats.write_json(args.out, results)
    print(" ".join(f"{k}={v:.2f}" for k, v in results["auc"].items()) + f" over {results['count']} pairs")
    return 0


def _common(p, out_help, out_default=None):
    p.add_argument("--config", help="TOML or JSON generation config")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", default=out_default, required=out_default is None, help=out_help)
    p.add_argument("--resume", action="store_true", help="skip samples already present in --out")
    p.add_argument("--inpaint-cmd", help=f"external inpainting command (env {INPAINT_ENV_VAR})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l2m", description="Lift RGB-D images to labelled training pairs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="pair images with depth files into a manifest")
    p.add_argument("roots", nargs="+")
    p.add_argument("--out", default="manifest.tsv")
    p.add_argument("--depth-dir", default="depth", help="name of the depth directory under each root")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("generate", help="generate labelled image pairs from a manifest")
    p.add_argument("manifest")
    _common(p, "output directory")
    p.set_defaults(func=lambda a: _generate(a, "pairs"))

    p = sub.add_parser("multiview", help="generate multi-view sets for feature distillation")
    p.add_argument("manifest")
    _common(p, "output directory")
    p.set_defaults(func=lambda a: _generate(a, "multiview"))

    p = sub.add_parser("fit-gaussians", help="distill per-view feature maps into feature Gaussians")
    p.add_argument("multiview", help="one multi-view set directory")
    p.add_argument("--features", help="directory of view_XX.l2mf maps (default: the set directory)")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--out", required=True, help="output .l2mg path; a .json fit report is written beside it")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render features and colors of a Gaussian set")
    p.add_argument("gaussians")
    p.add_argument("--camera", required=True, help="JSON with 'intrinsics' and 'pose'")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="relative-pose AUC over generated pairs")
    p.add_argument("pairs", help="a pair directory or a directory of pairs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--matches", help="directory of <pair_id>.txt match files")
    src.add_argument("--gt-matches", type=int, metavar="N", help="sample N matches from each stored warp")
    p.add_argument("--threshold", type=float, default=0.5, help="RANSAC threshold in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results.json")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (L2MError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
