"""
ghoststat Forward Model
Bucket synthesis S = γ Σ_m d_m I_m, additive measurement noise S' = S + e,
and the pattern sources a run correlates against.
"""

import math
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ghoststat.core.errors import (
    FormatError,
    InsufficientSamplesError,
    ParameterError,
    ShapeMismatchError,
)
from ghoststat.core.imaging import GrayImage, PatternFrame
from ghoststat.core.stochastic import NOISE_STREAM, DistributionSpec, SeedRecipe, sample_block
from ghoststat.core.worker import FrameWorker, ProgressCallback
from ghoststat.io.stacks import open_stack

logger = logging.getLogger("ghoststat.forward")


# ──────────────────────────────────────────────────────────────
# Noise
# ──────────────────────────────────────────────────────────────

class NoiseKind(str, Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class NoiseModel:
    """Additive detector noise e with mean E(e) and variance D(e)."""
    kind: NoiseKind = NoiseKind.NONE
    mean: float = 0.0
    var: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.kind is NoiseKind.NONE:
            object.__setattr__(self, "mean", 0.0)
            object.__setattr__(self, "var", 0.0)
        if not (math.isfinite(self.mean) and math.isfinite(self.var)) or self.var < 0:
            raise ParameterError(f"noise needs a finite mean and variance >= 0, got ({self.mean}, {self.var})")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(NoiseKind.NONE)

    @classmethod
    def gaussian(cls, mean: float, var: float) -> "NoiseModel":
        return cls(NoiseKind.GAUSSIAN, float(mean), float(var))

    @property
    def is_none(self) -> bool:
        return self.kind is NoiseKind.NONE

    def sample(self, T: int, recipe: SeedRecipe) -> np.ndarray:
        """e_1..e_T drawn once, in order, from the noise stream."""
        if self.is_none:
            return np.zeros(T)
        if self.var == 0.0:
            return np.full(T, self.mean)
        return recipe.generator_for(NOISE_STREAM).normal(self.mean, math.sqrt(self.var), T)

    def describe(self) -> str:
        if self.is_none:
            return "none"
        return f"gaussian(mean={self.mean:g}, var={self.var:g})"

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "mean": self.mean, "var": self.var}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "NoiseModel":
        data = data or {}
        kind = str(data.get("kind", "none")).lower()
        if kind == NoiseKind.NONE.value:
            return cls.none()
        if kind == NoiseKind.GAUSSIAN.value:
            return cls.gaussian(float(data.get("mean", 0.0)), float(data.get("var", 0.0)))
        raise ParameterError(f"Unknown noise kind: {data.get('kind')!r}")


# ──────────────────────────────────────────────────────────────
# Pattern sources
# ──────────────────────────────────────────────────────────────

class PatternSource(ABC):
    """Anything that can hand out frames [start, stop) as a (n, M) array."""

    @property
    @abstractmethod
    def M(self) -> int: ...

    @abstractmethod
    def block(self, start: int, stop: int) -> np.ndarray: ...

    @property
    @abstractmethod
    def reference_level(self) -> float:
        """Typical S_R = Σ_m I_m, used to shift accumulated sums."""

    @property
    def distribution(self) -> Optional[DistributionSpec]:
        return None

    def frame(self, t: int) -> PatternFrame:
        return PatternFrame(self.block(t, t + 1)[0])

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]: ...


class SeededPatternSource(PatternSource):
    """Frames regenerated on demand from (law, seed recipe)."""

    def __init__(self, dist: DistributionSpec, recipe: SeedRecipe, M: int):
        if M <= 0:
            raise ShapeMismatchError(f"M must be positive, got {M}")
        self._dist = dist
        self._recipe = recipe
        self._M = int(M)

    @property
    def M(self) -> int:
        return self._M

    @property
    def recipe(self) -> SeedRecipe:
        return self._recipe

    @property
    def distribution(self) -> DistributionSpec:
        return self._dist

    @property
    def reference_level(self) -> float:
        return self._M * self._dist.mean

    def block(self, start: int, stop: int) -> np.ndarray:
        return sample_block(self._dist, self._M, start, stop, self._recipe)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "seeded", "distribution": self._dist.to_dict(), "seed": self._recipe.to_dict()}


class StackPatternSource(PatternSource):
    """Frames read from a memory-mapped GIPS stack (recorded or externally produced)."""

    def __init__(self, path: str):
        self._path = path
        self._header, self._data = open_stack(path)
        self._reference = float(np.sum(self._data[0])) if self._header.T else 0.0

    @property
    def M(self) -> int:
        return self._header.M

    @property
    def T(self) -> int:
        return self._header.T

    @property
    def path(self) -> str:
        return self._path

    @property
    def reference_level(self) -> float:
        return self._reference

    def block(self, start: int, stop: int) -> np.ndarray:
        if start < 0 or stop > self._header.T or stop < start:
            raise ShapeMismatchError(f"frames [{start}, {stop}) outside stack of T={self._header.T}")
        frames = np.array(self._data[start:stop], dtype=np.float64)
        if frames.size and (not np.all(np.isfinite(frames)) or frames.min() < 0.0):
            raise FormatError(f"negative or non-finite intensity in frames [{start}, {stop})", self._path)
        return frames

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "stack", "path": self._path, "T": self._header.T, "M": self._header.M}


# ──────────────────────────────────────────────────────────────
# Measurement runs
# ──────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class MeasurementRun:
    """T bucket values plus everything needed to regenerate their patterns."""
    gamma: float
    buckets: np.ndarray
    source: PatternSource
    image: Optional[GrayImage] = None
    noise: NoiseModel = field(default_factory=NoiseModel.none)

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        buckets = np.array(self.buckets, dtype=np.float64).ravel()
        if buckets.size == 0:
            raise InsufficientSamplesError("a run needs at least one bucket value")
        if not np.all(np.isfinite(buckets)):
            raise ShapeMismatchError("bucket values must be finite")
        buckets.setflags(write=False)
        object.__setattr__(self, "buckets", buckets)
        if self.image is not None and self.image.M != self.source.M:
            raise ShapeMismatchError(f"image has {self.image.M} pixels, patterns have {self.source.M}")
        if isinstance(self.source, StackPatternSource) and self.source.T < buckets.size:
            raise ShapeMismatchError(f"{buckets.size} buckets but only {self.source.T} pattern frames")

    @property
    def T(self) -> int:
        return int(self.buckets.size)

    @property
    def M(self) -> int:
        return self.source.M

    @property
    def distribution(self) -> Optional[DistributionSpec]:
        return self.source.distribution

    @property
    def bucket_mean(self) -> float:
        return math.fsum(self.buckets) / self.T

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "T": self.T,
            "M": self.M,
            "noise": self.noise.to_dict(),
            "pattern_source": self.source.to_dict(),
            "image": self.image.to_dict() if self.image is not None else None,
        }


def bucket_signal(image: GrayImage, frame: PatternFrame, gamma: float) -> float:
    """S = γ Σ_m d_m I_m for one frame."""
    if frame.M != image.M:
        raise ShapeMismatchError(f"frame has {frame.M} pixels, image has {image.M}")
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return float(gamma * np.dot(image.values, frame.values))


def reference_bucket(frame: PatternFrame) -> float:
    """S_R = Σ_m I_m."""
    return float(np.sum(frame.values))


def simulate_run(
    image: GrayImage,
    dist: DistributionSpec,
    recipe: SeedRecipe,
    T: int,
    gamma: float,
    noise: Optional[NoiseModel] = None,
    worker: Optional[FrameWorker] = None,
    on_progress: Optional[ProgressCallback] = None,
) -> MeasurementRun:
    """Draw T frames from the recipe and record their (noisy) buckets."""
    noise = noise or NoiseModel.none()
    if T < 2:
        raise InsufficientSamplesError(f"a simulated run needs T >= 2, got {T}")
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    worker = worker or FrameWorker()
    source = SeededPatternSource(dist, recipe, image.M)
    d = image.values

    def chunk(start: int, stop: int) -> np.ndarray:
        return gamma * (source.block(start, stop) @ d)

    parts = worker.map_frames("simulate", T, image.M, chunk, on_progress)
    buckets = np.concatenate(parts)
    if not noise.is_none:
        buckets = buckets + noise.sample(T, recipe)

    logger.info(
        "Simulated T=%d, M=%d, %s, gamma=%g, noise=%s",
        T, image.M, dist.describe(), gamma, noise.describe(),
    )
    return MeasurementRun(gamma=gamma, buckets=buckets, source=source, image=image, noise=noise)


def estimate_noise_moments(dark_buckets: Any) -> Tuple[float, float]:
    """Sample mean and unbiased variance of dark (object-free) bucket readings."""
    samples = np.asarray(dark_buckets, dtype=np.float64).ravel()
    if samples.size < 2:
        raise InsufficientSamplesError(f"noise estimation needs at least 2 samples, got {samples.size}")
    return float(np.mean(samples)), float(np.var(samples, ddof=1))
