"""
ghoststat Run Directories
A run directory holds everything needed to regenerate an analysis:

    run.json             manifest (parameters, seed recipe, pattern source, host)
    buckets.f64          T little-endian float64 bucket values
    image.gips / .pgm    object, lossless (GIPS, T = 1) and an 8-bit preview
    patterns.gips        recorded patterns (ingested runs only)
    recon/               reconstruction sidecars and previews
    reconstructions.json index of the reconstructions written so far
"""

import os
import json
import math
import shutil
import hashlib
import logging
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ghoststat import __version__
from ghoststat.core.errors import FormatError, ShapeMismatchError
from ghoststat.core.estimators import Estimator, Reconstruction
from ghoststat.core.forward import (
    MeasurementRun,
    NoiseModel,
    PatternSource,
    SeededPatternSource,
    StackPatternSource,
)
from ghoststat.core.imaging import GrayImage
from ghoststat.core.stochastic import DistributionSpec, SeedRecipe, TransformKind, TransformSpec
from ghoststat.io.pgm import read_pgm, write_normalized_pgm, write_pgm
from ghoststat.io.stacks import read_vector, write_stack
from ghoststat.utils.hardware import host_profile

logger = logging.getLogger("ghoststat.runs")

RUN_FORMAT = "ghoststat-run"
RUN_VERSION = 1
MANIFEST_FILE = "run.json"
BUCKETS_FILE = "buckets.f64"
IMAGE_FILE = "image.gips"
IMAGE_PREVIEW = "image.pgm"
PATTERNS_FILE = "patterns.gips"
RECON_DIR = "recon"
RECON_INDEX = "reconstructions.json"
BUCKET_DTYPE = np.dtype("<f8")


def _write_json(path: str, data: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def grid_shape(M: int, width: Optional[int] = None, height: Optional[int] = None) -> Tuple[int, int]:
    """(width, height) for displaying M pixels: given, else square, else one row."""
    if width and height:
        if width * height != M:
            raise ShapeMismatchError(f"{width}x{height} does not hold {M} pixels")
        return width, height
    side = math.isqrt(M)
    if side * side == M:
        return side, side
    return M, 1


# ──────────────────────────────────────────────────────────────
# Save / load
# ──────────────────────────────────────────────────────────────

def save_run(
    run: MeasurementRun,
    run_dir: str,
    config: Optional[Dict[str, Any]] = None,
    width: Optional[int] = None,
    height: Optional[int] = None,
) -> str:
    """Write a run directory; returns the manifest path."""
    os.makedirs(run_dir, exist_ok=True)
    if run.image is not None:
        width, height = run.image.width, run.image.height
    width, height = grid_shape(run.M, width, height)

    buckets_path = os.path.join(run_dir, BUCKETS_FILE)
    run.buckets.astype(BUCKET_DTYPE).tofile(buckets_path)

    image_entry = None
    if run.image is not None:
        write_stack(os.path.join(run_dir, IMAGE_FILE), run.image.values)
        write_pgm(os.path.join(run_dir, IMAGE_PREVIEW), run.image, comments=["ghoststat object (8-bit preview)"])
        image_entry = {
            "file": IMAGE_FILE,
            "preview": IMAGE_PREVIEW,
            "width": run.image.width,
            "height": run.image.height,
            "sum_d": run.image.total,
        }

    source = run.source.to_dict()
    if isinstance(run.source, StackPatternSource):
        source["path"] = os.path.relpath(os.path.abspath(run.source.path), os.path.abspath(run_dir))

    manifest = {
        "format": RUN_FORMAT,
        "version": RUN_VERSION,
        "ghoststat_version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "gamma": run.gamma,
        "T": run.T,
        "M": run.M,
        "width": width,
        "height": height,
        "distribution": run.distribution.to_dict() if run.distribution else None,
        "noise": run.noise.to_dict(),
        "seed": run.source.recipe.to_dict() if isinstance(run.source, SeededPatternSource) else None,
        "pattern_source": source,
        "image": image_entry,
        "buckets": {"file": BUCKETS_FILE, "dtype": "<f8", "count": run.T, "sha256": _sha256(buckets_path)},
        "config": config or {},
        "host": host_profile(),
    }
    path = os.path.join(run_dir, MANIFEST_FILE)
    _write_json(path, manifest)
    logger.info("Run written to %s (T=%d, M=%d)", run_dir, run.T, run.M)
    return path


def read_manifest(run_dir: str) -> Dict[str, Any]:
    path = os.path.join(run_dir, MANIFEST_FILE)
    if not os.path.isfile(path):
        raise FormatError("no run manifest found (is this a run directory?)", path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e}", path) from e
    if manifest.get("format") != RUN_FORMAT:
        raise FormatError(f"unexpected format tag {manifest.get('format')!r}", path)
    for key in ("gamma", "T", "M", "pattern_source", "buckets"):
        if key not in manifest:
            raise FormatError(f"manifest is missing {key!r}", path)
    return manifest


def _source_from_manifest(manifest: Dict[str, Any], run_dir: str) -> PatternSource:
    source = manifest["pattern_source"]
    kind = source.get("kind")
    if kind == "seeded":
        dist = DistributionSpec.from_dict(source["distribution"])
        recipe = SeedRecipe(int(source["seed"]["master_seed"]))
        return SeededPatternSource(dist, recipe, int(manifest["M"]))
    if kind == "stack":
        path = source["path"]
        if not os.path.isabs(path):
            path = os.path.join(run_dir, path)
        return StackPatternSource(path)
    raise FormatError(f"unknown pattern source kind {kind!r}", os.path.join(run_dir, MANIFEST_FILE))


def load_run(run_dir: str) -> MeasurementRun:
    manifest = read_manifest(run_dir)
    buckets_path = os.path.join(run_dir, manifest["buckets"].get("file", BUCKETS_FILE))
    if not os.path.isfile(buckets_path):
        raise FormatError("bucket file missing", buckets_path)
    buckets = np.fromfile(buckets_path, dtype=BUCKET_DTYPE)
    if buckets.size != int(manifest["T"]):
        raise FormatError(f"{buckets.size} buckets on disk, manifest says T={manifest['T']}", buckets_path)

    image = None
    entry = manifest.get("image")
    if entry:
        values = read_vector(os.path.join(run_dir, entry["file"]), expected_m=int(manifest["M"]))
        image = GrayImage(int(entry["width"]), int(entry["height"]), values)

    return MeasurementRun(
        gamma=float(manifest["gamma"]),
        buckets=buckets,
        source=_source_from_manifest(manifest, run_dir),
        image=image,
        noise=NoiseModel.from_dict(manifest.get("noise")),
    )


def read_bucket_csv(path: str) -> np.ndarray:
    """One bucket value per line; '#' starts a comment."""
    try:
        values = np.loadtxt(path, dtype=np.float64, comments="#", delimiter=",", ndmin=1)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read bucket list: {e}", path) from e
    if values.ndim != 1:
        raise FormatError(f"expected one value per line, found {values.shape[1]} columns", path)
    return values


def ingest_run(
    buckets_csv: str,
    stack_path: str,
    run_dir: str,
    gamma: float = 1.0,
    image_path: Optional[str] = None,
    noise: Optional[NoiseModel] = None,
    width: Optional[int] = None,
    height: Optional[int] = None,
    config: Optional[Dict[str, Any]] = None,
) -> MeasurementRun:
    """Experimental data (CSV buckets + GIPS pattern stack) into a run directory."""
    buckets = read_bucket_csv(buckets_csv)
    image = read_pgm(image_path) if image_path else None
    noise = noise or NoiseModel.none()
    # validate against the caller's stack before anything is written
    staged = MeasurementRun(
        gamma=gamma, buckets=buckets, source=StackPatternSource(stack_path), image=image, noise=noise,
    )
    if image is None:
        grid_shape(staged.M, width, height)

    created = not os.path.isdir(run_dir)
    try:
        os.makedirs(run_dir, exist_ok=True)
        target = os.path.join(run_dir, PATTERNS_FILE)
        if os.path.abspath(stack_path) != os.path.abspath(target):
            shutil.copyfile(stack_path, target)
        run = MeasurementRun(gamma=gamma, buckets=buckets, source=StackPatternSource(target), image=image, noise=noise)
        save_run(run, run_dir, config=config, width=width, height=height)
    except Exception:
        if created:
            shutil.rmtree(run_dir, ignore_errors=True)
        raise
    return run


# ──────────────────────────────────────────────────────────────
# Reconstructions
# ──────────────────────────────────────────────────────────────

def save_reconstruction(
    recon: Reconstruction,
    run_dir: str,
    width: int,
    height: int,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Sidecar (GIPS, T = 1) plus normalized PGM preview; returns the index entry."""
    recon_dir = os.path.join(run_dir, RECON_DIR)
    os.makedirs(recon_dir, exist_ok=True)
    sidecar = os.path.join(RECON_DIR, f"{recon.label}.gips")
    preview = os.path.join(RECON_DIR, f"{recon.label}.pgm")
    write_stack(os.path.join(run_dir, sidecar), recon.values)
    lo, hi = write_normalized_pgm(
        os.path.join(run_dir, preview), recon.values, width, height,
        label=f"{recon.estimator.value} F={recon.transform.describe()} T={recon.T}",
    )
    entry = recon.to_dict()
    entry.update({"file": sidecar, "preview": preview, "min": lo, "max": hi})
    entry.update(extra or {})
    return entry


def write_reconstruction_index(run_dir: str, entries: List[Dict[str, Any]]) -> str:
    """Merge entries into the index by label."""
    path = os.path.join(run_dir, RECON_INDEX)
    current = {e["label"]: e for e in read_reconstruction_index(run_dir)}
    current.update({e["label"]: e for e in entries})
    _write_json(path, {"reconstructions": list(current.values())})
    return path


def read_reconstruction_index(run_dir: str) -> List[Dict[str, Any]]:
    path = os.path.join(run_dir, RECON_INDEX)
    if not os.path.isfile(path):
        return []
    try:
        with open(path, "r", encoding="utf-8") as f:
            return list(json.load(f).get("reconstructions", []))
    except json.JSONDecodeError as e:
        raise FormatError(f"reconstruction index is not valid JSON: {e}", path) from e


def load_reconstruction(run_dir: str, entry: Dict[str, Any]) -> Reconstruction:
    values = read_vector(os.path.join(run_dir, entry["file"]), expected_m=int(entry["M"]))
    t = entry["transform"]
    transform = TransformSpec(TransformKind(t["kind"]), float(t.get("k", 1.0)))
    return Reconstruction(Estimator(entry["estimator"]), transform, values, int(entry["T"]), form=entry["form"])


def load_reconstructions(run_dir: str) -> List[Reconstruction]:
    return [load_reconstruction(run_dir, entry) for entry in read_reconstruction_index(run_dir)]
