"""
ghoststat Estimators
Correlation reconstructions G², ΔG², g² and DGI from one streaming pass over
the frames, plus the two-pass centered ΔG² used as a cross-check.

Accumulated sums are kept relative to fixed shifts: bucket products use
S - a with a the run's bucket mean, reference products use S_R - r with r the
source's typical reference level. Every estimator is then a combination of
centered quantities, so a large common offset (detector noise mean, bright
backgrounds) never has to cancel out of two huge numbers.
"""

import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ghoststat.core.errors import DegenerateRunError, InsufficientSamplesError, ShapeMismatchError
from ghoststat.core.forward import MeasurementRun
from ghoststat.core.stochastic import TransformSpec
from ghoststat.core.worker import FrameWorker, ProgressCallback

logger = logging.getLogger("ghoststat.estimators")


class Estimator(str, Enum):
    G2 = "G2"
    DELTA_G2 = "DeltaG2"
    NORMALIZED_G2 = "g2"
    DGI = "DGI"

    @classmethod
    def parse(cls, text: str) -> "Estimator":
        raw = str(text).strip()
        for e in cls:
            if raw == e.value:
                return e
        for e in cls:
            if raw.lower() in (e.name.lower(), e.slug):
                return e
        raise ValueError(f"Unknown estimator: {text!r} (expected one of {[e.value for e in cls]})")

    @property
    def slug(self) -> str:
        """File-name stem; distinct even on case-insensitive file systems."""
        return {"G2": "g2", "DeltaG2": "delta_g2", "g2": "norm_g2", "DGI": "dgi"}[self.value]

    @property
    def min_frames(self) -> int:
        return 1 if self is Estimator.G2 else 2


CENTERED_FORM = "centered"
ONE_PASS_FORM = "one-pass"


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """Per-pixel estimator values for one (estimator, transform) pair."""
    estimator: Estimator
    transform: TransformSpec
    values: np.ndarray
    T: int
    form: str = ONE_PASS_FORM

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise DegenerateRunError(f"{self.estimator.value} produced non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "estimator", Estimator(self.estimator))

    @property
    def M(self) -> int:
        return int(self.values.size)

    @property
    def label(self) -> str:
        suffix = "_centered" if self.form == CENTERED_FORM else ""
        return f"{self.estimator.slug}_{self.transform.label}{suffix}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator.value,
            "transform": self.transform.to_dict(),
            "form": self.form,
            "T": self.T,
            "M": self.M,
            "label": self.label,
        }


# ──────────────────────────────────────────────────────────────
# Accumulator
# ──────────────────────────────────────────────────────────────

class CorrAccumulator:
    """
    Running sums over frames for K transforms at once.

    Per transform k and pixel n: Σ F, Σ (S - a) F, Σ (S_R - r) F.
    Globals: Σ (S - a), Σ (S_R - r) and the frame count.
    """

    def __init__(self, transforms: Sequence[TransformSpec], M: int, shift_s: float = 0.0, shift_r: float = 0.0):
        self.transforms = tuple(transforms)
        if not self.transforms:
            raise ValueError("at least one transform is required")
        self.M = int(M)
        self.shift_s = float(shift_s)
        self.shift_r = float(shift_r)
        K = len(self.transforms)
        self.sum_f = np.zeros((K, self.M))
        self.sum_sf = np.zeros((K, self.M))
        self.sum_rf = np.zeros((K, self.M))
        self.sum_s = 0.0
        self.sum_r = 0.0
        self.count = 0

    def add_block(self, frames: np.ndarray, buckets: np.ndarray) -> None:
        """Fold in frames (n, M) with their buckets (n,)."""
        frames = np.asarray(frames, dtype=np.float64)
        buckets = np.asarray(buckets, dtype=np.float64).ravel()
        if frames.ndim != 2 or frames.shape[1] != self.M or frames.shape[0] != buckets.size:
            raise ShapeMismatchError(
                f"block {frames.shape} does not match M={self.M} with {buckets.size} buckets"
            )
        ds = buckets - self.shift_s
        dr = frames.sum(axis=1) - self.shift_r
        for k, transform in enumerate(self.transforms):
            F = transform.apply(frames)
            self.sum_f[k] += F.sum(axis=0)
            self.sum_sf[k] += ds @ F
            self.sum_rf[k] += dr @ F
        self.sum_s += math.fsum(ds)
        self.sum_r += math.fsum(dr)
        self.count += buckets.size

    def rebase(self, shift_s: float, shift_r: float) -> "CorrAccumulator":
        """Same sums expressed relative to new shifts."""
        out = self.copy()
        ds = self.shift_s - shift_s
        dr = self.shift_r - shift_r
        out.sum_sf = self.sum_sf + ds * self.sum_f
        out.sum_rf = self.sum_rf + dr * self.sum_f
        out.sum_s = self.sum_s + ds * self.count
        out.sum_r = self.sum_r + dr * self.count
        out.shift_s = float(shift_s)
        out.shift_r = float(shift_r)
        return out

    def copy(self) -> "CorrAccumulator":
        out = CorrAccumulator(self.transforms, self.M, self.shift_s, self.shift_r)
        out.sum_f = self.sum_f.copy()
        out.sum_sf = self.sum_sf.copy()
        out.sum_rf = self.sum_rf.copy()
        out.sum_s = self.sum_s
        out.sum_r = self.sum_r
        out.count = self.count
        return out

    def merge(self, other: "CorrAccumulator") -> "CorrAccumulator":
        """Accumulator over the union of two disjoint frame ranges."""
        if other.transforms != self.transforms or other.M != self.M:
            raise ShapeMismatchError("cannot merge accumulators over different transforms or M")
        if (other.shift_s, other.shift_r) != (self.shift_s, self.shift_r):
            other = other.rebase(self.shift_s, self.shift_r)
        out = self.copy()
        out.sum_f += other.sum_f
        out.sum_sf += other.sum_sf
        out.sum_rf += other.sum_rf
        out.sum_s += other.sum_s
        out.sum_r += other.sum_r
        out.count += other.count
        return out

    # ── averages ──

    def _index(self, transform: TransformSpec) -> int:
        try:
            return self.transforms.index(transform)
        except ValueError:
            raise KeyError(f"transform {transform.describe()} was not accumulated") from None

    def _require(self, estimator: Estimator) -> None:
        if self.count < estimator.min_frames:
            raise InsufficientSamplesError(
                f"{estimator.value} needs T >= {estimator.min_frames}, have {self.count}"
            )

    @property
    def mean_s(self) -> float:
        return self.shift_s + self.sum_s / self.count

    @property
    def mean_r(self) -> float:
        return self.shift_r + self.sum_r / self.count

    def mean_f(self, transform: TransformSpec) -> np.ndarray:
        return self.sum_f[self._index(transform)] / self.count

    def _cov_sf(self, k: int) -> np.ndarray:
        return self.sum_sf[k] / self.count - (self.sum_s / self.count) * (self.sum_f[k] / self.count)

    def _cov_rf(self, k: int) -> np.ndarray:
        return self.sum_rf[k] / self.count - (self.sum_r / self.count) * (self.sum_f[k] / self.count)

    # ── estimators ──

    def g2(self, transform: TransformSpec) -> np.ndarray:
        """⟨S F_n⟩."""
        self._require(Estimator.G2)
        k = self._index(transform)
        return self.sum_sf[k] / self.count + self.shift_s * (self.sum_f[k] / self.count)

    def delta_g2(self, transform: TransformSpec) -> np.ndarray:
        """⟨S F_n⟩ - ⟨S⟩⟨F_n⟩."""
        self._require(Estimator.DELTA_G2)
        return self._cov_sf(self._index(transform))

    def normalized_g2(self, transform: TransformSpec) -> np.ndarray:
        """⟨S F_n⟩ / (⟨S⟩⟨F_n⟩)."""
        self._require(Estimator.NORMALIZED_G2)
        mean_s = self.mean_s
        mean_f = self.mean_f(transform)
        if mean_s == 0.0:
            raise DegenerateRunError("g2 is undefined: mean bucket value is 0 (all-opaque object?)")
        zero = np.flatnonzero(mean_f == 0.0)
        if zero.size:
            raise DegenerateRunError(f"g2 is undefined: mean pattern value is 0 at pixel {int(zero[0])}")
        return 1.0 + self._cov_sf(self._index(transform)) / (mean_s * mean_f)

    def dgi(self, transform: TransformSpec) -> np.ndarray:
        """⟨S F_n⟩ - (⟨S⟩ / ⟨S_R⟩)⟨S_R F_n⟩."""
        self._require(Estimator.DGI)
        mean_r = self.mean_r
        if mean_r == 0.0:
            raise DegenerateRunError("DGI is undefined: mean reference bucket is 0")
        k = self._index(transform)
        return self._cov_sf(k) - (self.mean_s / mean_r) * self._cov_rf(k)

    def reconstruct(self, estimator: Estimator, transform: TransformSpec) -> Reconstruction:
        estimator = Estimator(estimator)
        values = {
            Estimator.G2: self.g2,
            Estimator.DELTA_G2: self.delta_g2,
            Estimator.NORMALIZED_G2: self.normalized_g2,
            Estimator.DGI: self.dgi,
        }[estimator](transform)
        return Reconstruction(estimator, transform, values, self.count)


# ──────────────────────────────────────────────────────────────
# Passes over a run
# ──────────────────────────────────────────────────────────────

def _check_transforms(run: MeasurementRun, transforms: Sequence[TransformSpec]) -> None:
    dist = run.distribution
    if dist is not None:
        for transform in transforms:
            transform.check_support(dist)


def accumulate(
    run: MeasurementRun,
    transforms: Sequence[TransformSpec],
    worker: Optional[FrameWorker] = None,
    on_progress: Optional[ProgressCallback] = None,
) -> CorrAccumulator:
    """One pass over all frames of a run, every transform at once."""
    transforms = tuple(dict.fromkeys(transforms))
    _check_transforms(run, transforms)
    worker = worker or FrameWorker()
    shift_s = run.bucket_mean
    shift_r = run.source.reference_level

    def chunk(start: int, stop: int) -> CorrAccumulator:
        acc = CorrAccumulator(transforms, run.M, shift_s, shift_r)
        acc.add_block(run.source.block(start, stop), run.buckets[start:stop])
        return acc

    acc = worker.reduce_frames("accumulate", run.T, run.M, chunk, CorrAccumulator.merge, on_progress)
    logger.debug("Accumulated %d frames for %s", acc.count, [t.label for t in transforms])
    return acc


def reconstruct_all(
    run: MeasurementRun,
    estimators: Sequence[Estimator],
    transforms: Sequence[TransformSpec],
    worker: Optional[FrameWorker] = None,
    on_progress: Optional[ProgressCallback] = None,
) -> List[Reconstruction]:
    """Every (estimator, transform) pair from a single pass."""
    acc = accumulate(run, transforms, worker, on_progress)
    return [acc.reconstruct(Estimator(e), t) for t in dict.fromkeys(transforms) for e in estimators]


def reconstruct_g2(run: MeasurementRun, transform: TransformSpec, worker: Optional[FrameWorker] = None) -> Reconstruction:
    return accumulate(run, [transform], worker).reconstruct(Estimator.G2, transform)


def reconstruct_delta_g2(run: MeasurementRun, transform: TransformSpec, worker: Optional[FrameWorker] = None) -> Reconstruction:
    return accumulate(run, [transform], worker).reconstruct(Estimator.DELTA_G2, transform)


def reconstruct_normalized_g2(run: MeasurementRun, transform: TransformSpec, worker: Optional[FrameWorker] = None) -> Reconstruction:
    return accumulate(run, [transform], worker).reconstruct(Estimator.NORMALIZED_G2, transform)


def reconstruct_dgi(run: MeasurementRun, transform: TransformSpec, worker: Optional[FrameWorker] = None) -> Reconstruction:
    return accumulate(run, [transform], worker).reconstruct(Estimator.DGI, transform)


def centered_delta_g2(
    run: MeasurementRun,
    transforms: Sequence[TransformSpec],
    first_pass: Optional[CorrAccumulator] = None,
    worker: Optional[FrameWorker] = None,
    on_progress: Optional[ProgressCallback] = None,
) -> List[Reconstruction]:
    """⟨(S - ⟨S⟩)(F_n - ⟨F_n⟩)⟩ with the means taken from a first pass."""
    transforms = tuple(dict.fromkeys(transforms))
    if run.T < Estimator.DELTA_G2.min_frames:
        raise InsufficientSamplesError(f"DeltaG2 needs T >= 2, have {run.T}")
    worker = worker or FrameWorker()
    acc = first_pass if first_pass is not None else accumulate(run, transforms, worker)
    mean_s = acc.mean_s
    mean_f = np.stack([acc.mean_f(t) for t in transforms])

    def chunk(start: int, stop: int) -> np.ndarray:
        frames = run.source.block(start, stop)
        ds = run.buckets[start:stop] - mean_s
        return np.stack([ds @ (t.apply(frames) - mean_f[k]) for k, t in enumerate(transforms)])

    total = worker.reduce_frames("centered", run.T, run.M, chunk, np.add, on_progress)
    return [
        Reconstruction(Estimator.DELTA_G2, t, total[k] / run.T, run.T, form=CENTERED_FORM)
        for k, t in enumerate(transforms)
    ]


def reconstruct_delta_g2_centered(
    run: MeasurementRun, transform: TransformSpec, worker: Optional[FrameWorker] = None
) -> Reconstruction:
    return centered_delta_g2(run, [transform], worker=worker)[0]


def identity_deviation(a: Any, b: Any) -> float:
    """max|a - b| relative to the larger of the two value ranges."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compare shapes {a.shape} and {b.shape}")
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), np.finfo(np.float64).tiny)
    return float(np.max(np.abs(a - b))) / scale
