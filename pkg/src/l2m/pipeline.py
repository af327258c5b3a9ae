"""Corpus scanning and deterministic batch generation."""

from __future__ import annotations

import hashlib
import logging
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import formats
from .config import GenConfig
from .errors import InputError, L2MError
from .generate import SampleRejected, generate_multiview, generate_pair, write_multiview, write_pair

log = logging.getLogger(__name__)

DEPTH_SUFFIXES = (".pfm", ".png")
SKIPPED_HEADER = "# skipped (no matching depth)"


@dataclass
class ScanResult:
    pairs: list = field(default_factory=list)    # [(image_path, depth_path)]
    skipped: list = field(default_factory=list)  # [image_path]
    warning: str | None = None


def _depth_candidates(image: Path, root: Path, depth_root: Path):
    rel = image.relative_to(root)
    yield from (depth_root / rel.with_suffix(s) for s in DEPTH_SUFFIXES)
    if len(rel.parts) > 1:
        # images/<sub>/x.jpg alongside depth/<sub>/x.pfm
        tail = Path(*rel.parts[1:])
        yield from (depth_root / tail.with_suffix(s) for s in DEPTH_SUFFIXES)


def scan_corpus(roots, manifest_out=None, depth_dirname: str = "depth") -> ScanResult:
    """Pair every image under ``roots`` with a depth file of the same stem.

    Depth files live in ``<root>/<depth_dirname>/``, mirroring the image's
    path relative to the root (optionally without its top-level directory).
    """
    result = ScanResult()
    for root in (Path(r) for r in roots):
        if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
            raise InputError(f"cannot read corpus root {root}")
        depth_root = root / depth_dirname
        for image in root.rglob("*"):
            if not image.is_file() or image.suffix.lower() not in formats.IMAGE_SUFFIXES:
                continue
            if depth_root in image.parents:
                continue
            depth = next((c for c in _depth_candidates(image, root, depth_root) if c.is_file()), None)
            if depth is None:
                result.skipped.append(str(image))
            else:
                result.pairs.append((str(image), str(depth)))
    result.pairs.sort()
    result.skipped.sort()
    if not result.pairs:
        result.warning = "no image/depth pairs found"
        log.warning(result.warning)
    if manifest_out is not None:
        write_manifest(manifest_out, result)
    return result


def write_manifest(path, scan: ScanResult) -> None:
    lines = [f"{img}\t{depth}" for img, depth in scan.pairs]
    if scan.skipped:
        lines.append(SKIPPED_HEADER)
        lines.extend(f"# {img}" for img in scan.skipped)
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path) -> list:
    """Return ``[(image_path, depth_path)]``; comment and blank lines are ignored."""
    pairs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InputError(f"{path}:{n}: expected 'image<TAB>depth'")
        pairs.append((parts[0], parts[1]))
    return pairs


def derive_seed(master_seed: int, index: int, slot: int = 0, attempt: int = 0) -> int:
    """63-bit seed from a stable hash, independent of process and scheduling."""
    key = f"l2m:{int(master_seed)}:{int(index)}:{int(slot)}:{int(attempt)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") >> 1


def sample_ids(index: int, cfg: GenConfig, mode: str) -> list:
    if mode == "multiview" or cfg.pairs_per_image == 1:
        return [f"{index:06d}"]
    return [f"{index:06d}_{j:02d}" for j in range(cfg.pairs_per_image)]


def _atomic_write(out_dir: Path, sample_id: str, writer) -> None:
    final = out_dir / sample_id
    tmp = out_dir / f".tmp-{sample_id}-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        writer(tmp)
        if final.exists():
            shutil.rmtree(final)
        os.rename(tmp, final)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def _process_item(args) -> list:
    """Generate every sample of one manifest entry; returns per-sample records."""
    index, image_path, depth_path, cfg, out_dir, mode, todo = args
    out_dir = Path(out_dir)
    records = []
    try:
        image = formats.read_image(image_path)
        depth = formats.read_depth(depth_path)
    except (OSError, L2MError) as exc:
        return [{"id": sid, "status": "rejected", "reason": "unreadable_source", "detail": str(exc)}
                for sid in todo]
    ids = sample_ids(index, cfg, mode)
    for slot, sid in enumerate(ids):
        if sid not in todo:
            continue
        record = {"id": sid, "source": image_path}
        for attempt in range(cfg.max_attempts):
            seed = derive_seed(cfg.seed, index, slot, attempt)
            record.update(seed=seed, attempts=attempt + 1)
            try:
                if mode == "multiview":
                    result = generate_multiview(image, depth, cfg, seed, image_path)
                    _atomic_write(out_dir, sid, lambda d, r=result: write_multiview(r, d))
                else:
                    result = generate_pair(image, depth, cfg, seed, image_path)
                    _atomic_write(out_dir, sid, lambda d, r=result, s=sid: write_pair(r, d, s))
            except SampleRejected as exc:
                record.update(status="rejected", reason=exc.reason, detail=str(exc))
                continue
            except L2MError as exc:
                record.update(status="rejected", reason=type(exc).__name__, detail=str(exc))
                break
            record.update(status="accepted", reason=None, detail="")
            break
        records.append(record)
    return records


def _is_done(out_dir: Path, sid: str) -> bool:
    return (out_dir / sid / "meta.json").is_file()


def run_generation(manifest, cfg: GenConfig, out_dir, jobs: int = 1, resume: bool = False,
                   mode: str = "pairs") -> dict:
    """Generate every manifest entry into ``out_dir/<sample_id>/`` and write ``summary.json`` last.

    ``manifest`` is a path or a list of ``(image, depth)`` tuples. Each sample
    seed depends only on the master seed and the manifest position, so the
    output does not depend on ``jobs``. Rejected samples leave no directory.
    """
    if mode not in ("pairs", "multiview"):
        raise InputError(f"unknown generation mode {mode!r}")
    start = time.perf_counter()
    entries = read_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else list(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")

    tasks, skipped = [], []
    for index, (image, depth) in enumerate(entries):
        ids = sample_ids(index, cfg, mode)
        todo = [sid for sid in ids if not (resume and _is_done(out_dir, sid))]
        skipped.extend(sid for sid in ids if sid not in todo)
        if todo:
            tasks.append((index, str(image), str(depth), cfg, str(out_dir), mode, todo))

    records = []
    if jobs <= 1 or len(tasks) <= 1:
        for task in tasks:
            records.extend(_process_item(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_process_item, tasks):
                records.extend(recs)
    records.extend({"id": sid, "status": "skipped", "reason": "exists"} for sid in skipped)
    records.sort(key=lambda r: r["id"])

    rejected = {}
    for r in records:
        if r["status"] == "rejected":
            rejected[r["reason"]] = rejected.get(r["reason"], 0) + 1
    summary = {
        "mode": mode,
        "accepted": sum(r["status"] == "accepted" for r in records),
        "resumed": len(skipped),
        "rejected": rejected,
        "total": len(records),
        "samples": records,
        "config": cfg.to_dict(),
        "wall_time_s": time.perf_counter() - start,
    }
    formats.write_json(out_dir / "summary.json", summary)
    return summary
