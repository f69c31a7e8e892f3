"""
ghoststat Imaging Core
Object transmittance maps, pattern frames and gray-level region bookkeeping.
Pixel index n (row-major) is the only addressing scheme used anywhere.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ghoststat.core.errors import ImageError, ShapeMismatchError

logger = logging.getLogger("ghoststat.imaging")

DEFAULT_REGION_TOLERANCE = 1e-9


def _frozen(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Object transmittance d_m in [0, 1]; 0 opaque, 1 transparent."""
    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ImageError(f"Image dimensions must be positive, got {self.width}x{self.height}")
        values = _frozen(self.values)
        if values.size != self.width * self.height:
            raise ImageError(
                f"Expected {self.width * self.height} values for {self.width}x{self.height}, got {values.size}"
            )
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise ImageError("Gray values must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array: Any) -> "GrayImage":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 2:
            raise ImageError(f"Expected a 2-D array, got {arr.ndim} dimensions")
        height, width = arr.shape
        return cls(width=width, height=height, values=arr)

    @property
    def M(self) -> int:
        return self.width * self.height

    @property
    def total(self) -> float:
        """Σ_m d_m."""
        return float(np.sum(self.values))

    @property
    def total_squared(self) -> float:
        """Σ_m d_m²."""
        return float(np.dot(self.values, self.values))

    def as_2d(self) -> np.ndarray:
        return self.values.reshape(self.height, self.width)

    def with_pixel(self, n: int, value: float) -> "GrayImage":
        """Copy of this image with pixel n set to value."""
        arr = self.values.copy()
        arr[n] = value
        return GrayImage(self.width, self.height, arr)

    def to_dict(self) -> Dict[str, Any]:
        return {"width": self.width, "height": self.height, "M": self.M, "sum_d": self.total}


@dataclass(frozen=True, eq=False)
class PatternFrame:
    """One reference pattern: pixel intensities I_m >= 0."""
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.size and (not np.all(np.isfinite(values)) or values.min() < 0.0):
            raise ImageError("Pattern intensities must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @property
    def M(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class GrayRegionIndex:
    """Partition of pixel indices by gray level, levels strictly increasing."""
    levels: Tuple[float, ...]
    membership: Tuple[np.ndarray, ...]
    M: int = 0
    labels: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def sizes(self) -> List[int]:
        return [int(m.size) for m in self.membership]

    @property
    def fractions(self) -> List[float]:
        return [size / self.M for size in self.sizes]

    def region_values(self, values: np.ndarray, region: int) -> np.ndarray:
        """Pick one region's entries out of a per-pixel array."""
        values = np.asarray(values)
        if values.size != self.M:
            raise ShapeMismatchError(f"Per-pixel array has {values.size} entries, partition covers {self.M}")
        return values[self.membership[region]]

    def reconstruct_values(self) -> np.ndarray:
        """Rebuild a value array from (levels, membership)."""
        out = np.empty(self.M, dtype=np.float64)
        for level, members in zip(self.levels, self.membership):
            out[members] = level
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "levels": list(self.levels),
            "sizes": self.sizes,
            "fractions": [round(f, 6) for f in self.fractions],
        }


def build_region_index(image: GrayImage, tolerance: float = DEFAULT_REGION_TOLERANCE) -> GrayRegionIndex:
    """Group pixels by gray value; sorted values closer than tolerance merge into one level."""
    if tolerance < 0:
        raise ImageError(f"Region tolerance must be >= 0, got {tolerance}")

    values = image.values
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    breaks = np.flatnonzero(np.diff(ordered) > tolerance) + 1
    groups = np.split(order, breaks)

    levels: List[float] = []
    membership: List[np.ndarray] = []
    labels = np.empty(image.M, dtype=np.int64)
    for i, members in enumerate(groups):
        members = np.sort(members)
        members.setflags(write=False)
        level_values = values[members]
        # exact when every member has the same value
        level = float(level_values[0]) if np.all(level_values == level_values[0]) else float(level_values.mean())
        levels.append(level)
        membership.append(members)
        labels[members] = i

    labels.setflags(write=False)
    return GrayRegionIndex(levels=tuple(levels), membership=tuple(membership), M=image.M, labels=labels)


class CardLayout(str, Enum):
    STRIPES = "stripes"
    NESTED_RECTS = "nested-rects"


def _stripe_labels(M: int, n_levels: int, fractions: Optional[Sequence[float]]) -> np.ndarray:
    if fractions is None:
        return (np.arange(M) * n_levels) // M

    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size != n_levels or np.any(fr <= 0):
        raise ImageError("Card fractions must be positive, one per level")
    bounds = np.rint(np.cumsum(fr / fr.sum()) * M).astype(np.int64)
    bounds[-1] = M
    # every level keeps at least one pixel
    for i in range(n_levels):
        low = bounds[i - 1] if i else 0
        bounds[i] = max(bounds[i], low + 1)
    if bounds[-1] > M:
        raise ImageError(f"{M} pixels cannot hold {n_levels} levels")
    labels = np.empty(M, dtype=np.int64)
    start = 0
    for i, stop in enumerate(bounds):
        labels[start:stop] = i
        start = stop
    return labels


def _nested_rect_labels(width: int, height: int, n_levels: int) -> np.ndarray:
    rows, cols = np.indices((height, width))
    depth = np.minimum(np.minimum(rows, cols), np.minimum(height - 1 - rows, width - 1 - cols))
    rings = int(depth.max()) + 1
    if rings < n_levels:
        raise ImageError(f"A {width}x{height} card has {rings} rings, too few for {n_levels} nested levels")
    return ((depth * n_levels) // rings).ravel()


def make_test_card(
    width: int,
    height: int,
    levels: Sequence[float],
    layout: str = CardLayout.STRIPES.value,
    fractions: Optional[Sequence[float]] = None,
) -> GrayImage:
    """
    Synthetic object with exactly the requested gray levels.

    ``stripes`` lays the levels out as row-major bands (sized by ``fractions``
    when given); ``nested-rects`` draws concentric rectangles, outermost first.
    """
    if width <= 0 or height <= 0:
        raise ImageError(f"Card dimensions must be positive, got {width}x{height}")
    levels = [float(v) for v in levels]
    if not levels:
        raise ImageError("A test card needs at least one gray level")
    if any(v < 0.0 or v > 1.0 for v in levels):
        raise ImageError(f"Card levels must lie in [0, 1]: {levels}")
    if len(set(levels)) != len(levels):
        raise ImageError(f"Card levels must be distinct: {levels}")
    M = width * height
    if M < len(levels):
        raise ImageError(f"{M} pixels cannot hold {len(levels)} levels")

    kind = CardLayout(layout)
    if kind is CardLayout.STRIPES:
        labels = _stripe_labels(M, len(levels), fractions)
    else:
        labels = _nested_rect_labels(width, height, len(levels))

    image = GrayImage(width, height, np.asarray(levels)[labels])
    regions = build_region_index(image, tolerance=0.0)
    logger.debug(
        "Test card %dx%d (%s): levels=%s fractions=%s",
        width, height, kind.value, list(regions.levels), [round(f, 5) for f in regions.fractions],
    )
    return image
