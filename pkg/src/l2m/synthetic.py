"""Procedural RGB-D scenes for smoke corpora and tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import formats
from .lift import DepthMap


def procedural_scene(rng: np.random.Generator, width: int = 96, height: int = 96, occluders: int = 2):
    """A smooth textured image over a tilted plane with a few box occluders.

    Returns ``(image_srgb, depth)``; depth is in meters, roughly 2 to 4 m.
    """
    vs, us = np.mgrid[0:height, 0:width].astype(np.float64)
    x, y = us / width, vs / height
    image = np.empty((height, width, 3))
    for c in range(3):
        fx, fy = rng.uniform(1.0, 4.0, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        image[..., c] = 0.5 + 0.25 * np.sin(2 * np.pi * fx * x + phase[0]) + 0.2 * np.cos(2 * np.pi * fy * y + phase[1])
    base = rng.uniform(2.5, 3.5)
    gx, gy = rng.uniform(-0.8, 0.8, size=2)
    depth = base + gx * (x - 0.5) + gy * (y - 0.5)
    for _ in range(occluders):
        w, h = rng.integers(width // 8, width // 3), rng.integers(height // 8, height // 3)
        x0, y0 = rng.integers(0, width - w), rng.integers(0, height - h)
        depth[y0:y0 + h, x0:x0 + w] = rng.uniform(1.6, 2.2)
        image[y0:y0 + h, x0:x0 + w] = 0.6 * image[y0:y0 + h, x0:x0 + w] + 0.4 * rng.uniform(0, 1, size=3)
    return np.clip(image, 0.0, 1.0), DepthMap.from_array(depth)


def write_smoke_corpus(root, count: int = 16, width: int = 96, height: int = 96, seed: int = 0) -> Path:
    """Write ``count`` scenes as ``root/images/NNNN.png`` with depth under ``root/depth``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        image, depth = procedural_scene(np.random.default_rng([seed, i]), width, height)
        formats.write_image(root / "images" / f"{i:04d}.png", image)
        formats.write_depth(root / "depth" / f"{i:04d}.pfm", depth)
    return root
