"""On-disk formats: PNG images and masks, PFM / 16-bit PNG depth, and the
little-endian binary containers for warps (L2MW), feature maps (L2MF) and
Gaussian sets (L2MG)."""

from __future__ import annotations

import json
import os
import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .color import as_float_image, linear_to_srgb, to_uint8
from .errors import FormatError
from .gaussians import FeatureMap, GaussianSet
from .lift import DepthMap
from .synth_warp import CertaintyMap, WarpField

FORMAT_VERSION = 1
SIDECAR_SCHEMA_VERSION = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")


def read_image(path) -> np.ndarray:
    """Load an image as (H, W, 3) float sRGB in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return as_float_image(np.asarray(im, dtype=np.uint16))
        return as_float_image(np.asarray(im.convert("RGB")))


def write_image(path, srgb) -> None:
    """Write a [0, 1] sRGB float (or uint8) image as 8-bit PNG."""
    arr = np.asarray(srgb)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def write_linear_image(path, linear) -> None:
    write_image(path, linear_to_srgb(linear))


def write_mask(path, mask) -> None:
    """Boolean or [0, 1] mask to 8-bit grayscale PNG (255 = 1)."""
    arr = np.asarray(mask)
    arr = (arr.astype(bool) * 255).astype(np.uint8) if arr.dtype == bool else to_uint8(arr)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """8-bit PNG to float values in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_certainty(path, certainty: CertaintyMap) -> None:
    write_mask(path, certainty.values)


def read_certainty(path) -> CertaintyMap:
    return CertaintyMap(read_mask(path))


def write_pfm(path, values) -> None:
    """Single-channel little-endian PFM; rows are stored bottom-up."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise FormatError(f"PFM writer expects a 2-D array, got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array with top-down rows; color files give (H, W, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    match = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if not match:
        raise FormatError(f"{path}: not a PFM file")
    kind, w, h, scale = match.group(1), int(match.group(2)), int(match.group(3)), float(match.group(4))
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    body = data[match.end():]
    if len(body) < 4 * count:
        raise FormatError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return arr.reshape(shape)[::-1].copy()


def read_depth(path) -> DepthMap:
    """Read PFM depth (meters) or 16-bit PNG depth (millimeters)."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        values = read_pfm(path).astype(np.float64)
        if values.ndim == 3:
            values = values[..., 0]
    else:
        with Image.open(path) as im:
            raw = np.asarray(im)
        if raw.ndim != 2 or raw.dtype not in (np.uint16, np.int32, np.uint8):
            raise FormatError(f"{path}: expected a 16-bit grayscale PNG depth map")
        values = raw.astype(np.float64) / 1000.0
    return DepthMap.from_array(values)


def write_depth(path, depth: DepthMap) -> None:
    """Write depth as PFM (invalid pixels stored as 0) or, for .png, 16-bit millimeters."""
    path = Path(path)
    values = np.where(depth.valid, depth.values, 0.0)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, values)
    else:
        mm = np.clip(np.round(values * 1000.0), 0, 65535).astype(np.uint16)
        Image.fromarray(mm).save(path, format="PNG")


def _check_magic(data: bytes, magic: bytes, path) -> None:
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    if len(data) < 5 or data[4] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version")


def write_warp(path, warp: WarpField) -> None:
    h, w = warp.valid.shape
    payload = np.where(warp.valid[..., None], warp.target, np.nan).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"L2MW" + struct.pack("<BII", FORMAT_VERSION, w, h))
        fh.write(payload.tobytes())


def read_warp(path) -> WarpField:
    data = Path(path).read_bytes()
    _check_magic(data, b"L2MW", path)
    _, w, h = struct.unpack_from("<BII", data, 4)
    body = data[13:]
    if len(body) != 8 * w * h:
        raise FormatError(f"{path}: payload size {len(body)} does not match {w}x{h}")
    target = np.frombuffer(body, dtype="<f4").reshape(h, w, 2).astype(np.float64)
    valid = np.isfinite(target).all(axis=2)
    return WarpField(target, valid)


def write_feature_map(path, fmap: FeatureMap) -> None:
    h, w, c = fmap.values.shape
    with open(path, "wb") as fh:
        fh.write(b"L2MF" + struct.pack("<BIII", FORMAT_VERSION, h, w, c))
        fh.write(fmap.values.astype("<f4").tobytes())


def read_feature_map(path) -> FeatureMap:
    data = Path(path).read_bytes()
    _check_magic(data, b"L2MF", path)
    _, h, w, c = struct.unpack_from("<BIII", data, 4)
    body = data[17:]
    if len(body) != 4 * h * w * c:
        raise FormatError(f"{path}: payload size does not match {h}x{w}x{c}")
    return FeatureMap(np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64))


def write_gaussians(path, gs: GaussianSet) -> None:
    """Per Gaussian: mu(3) scale(3) quaternion(4) opacity(1) sh(3) feature(d), float32."""
    rows = np.concatenate([gs.mu, gs.scale, gs.orientation, gs.opacity[:, None], gs.sh, gs.features], axis=1)
    with open(path, "wb") as fh:
        fh.write(b"L2MG" + struct.pack("<BII", FORMAT_VERSION, len(gs), gs.dim))
        fh.write(rows.astype("<f4").tobytes())


def read_gaussians(path) -> GaussianSet:
    data = Path(path).read_bytes()
    _check_magic(data, b"L2MG", path)
    _, n, d = struct.unpack_from("<BII", data, 4)
    width = 14 + d
    body = data[13:]
    if len(body) != 4 * n * width:
        raise FormatError(f"{path}: payload size does not match {n} Gaussians of dimension {d}")
    rows = np.frombuffer(body, dtype="<f4").reshape(n, width).astype(np.float64)
    quat = rows[:, 6:10]
    norms = np.linalg.norm(quat, axis=1, keepdims=True)
    quat = quat / np.where(norms > 0, norms, 1.0)
    return GaussianSet(rows[:, 0:3], rows[:, 3:6], quat, np.clip(rows[:, 10], 0.0, 1.0), rows[:, 11:14],
                       rows[:, 14:])


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_json(path):
    return json.loads(Path(path).read_text())


def write_json(path, obj) -> None:
    """Write JSON through a temporary file and rename it into place."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    tmp.write_text(dumps_json(obj))
    os.replace(tmp, path)


_CAMERA_SCHEMA = {
    "type": "object",
    "required": ["intrinsics", "pose"],
    "properties": {
        "intrinsics": {
            "type": "object",
            "required": ["fx", "fy", "cx", "cy", "width", "height"],
            "properties": {k: {"type": "number"} for k in ("fx", "fy", "cx", "cy")}
            | {"width": {"type": "integer", "minimum": 1}, "height": {"type": "integer", "minimum": 1}},
        },
        "pose": {
            "type": "object",
            "required": ["q", "t"],
            "properties": {
                "q": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                "t": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
            },
        },
    },
}

SIDECAR_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "sample_id", "resolution", "camera1", "camera2", "lights", "provenance"],
    "properties": {
        "schema_version": {"const": SIDECAR_SCHEMA_VERSION},
        "sample_id": {"type": "string"},
        "resolution": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "camera1": _CAMERA_SCHEMA,
        "camera2": _CAMERA_SCHEMA,
        "lights": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["position", "intensity", "color"],
                "properties": {
                    "position": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                    "intensity": {"type": "number", "exclusiveMinimum": 0},
                    "color": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                              "minItems": 3, "maxItems": 3},
                },
            },
        },
        "provenance": {
            "type": "object",
            "required": ["source_image", "seed", "scale_a", "shift_b"],
        },
    },
}


def validate_sidecar(meta: dict) -> None:
    """Raise ``FormatError`` if ``meta`` does not match the pair sidecar schema."""
    import jsonschema

    try:
        jsonschema.validate(meta, SIDECAR_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise FormatError(f"invalid sidecar: {exc.message}") from exc
