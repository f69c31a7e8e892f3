"""
ghoststat Analysis
Per-gray-region statistics of a reconstruction: histograms against the
predicted Gaussian, Kolmogorov-Smirnov distances, and the straight-line fit
of region means against gray value.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps

from ghoststat.core.errors import DegenerateRunError, InsufficientSamplesError, ShapeMismatchError
from ghoststat.core.estimators import Estimator, Reconstruction
from ghoststat.core.imaging import GrayRegionIndex
from ghoststat.core.theory import TheoryPrediction

logger = logging.getLogger("ghoststat.analysis")

DEFAULT_BINS = 51
HISTOGRAM_HALF_WIDTH = 5.0
MIN_KS_SAMPLES = 8
BAND_SIGMAS = 4.0

# Asymptotic one-sample KS critical coefficients c(α), threshold c(α)/√N
KS_COEFFICIENTS = {0.20: 1.07, 0.15: 1.14, 0.10: 1.22, 0.05: 1.36, 0.025: 1.48, 0.01: 1.63, 0.005: 1.73, 0.001: 1.95}


def ks_threshold(n: int, alpha: float = 0.05) -> float:
    c = KS_COEFFICIENTS.get(round(alpha, 6))
    if c is None:
        c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c / math.sqrt(n)


def ks_statistic(samples: Any, mu: float, sigma2: float) -> float:
    """sup |ECDF - Φ((x - μ)/σ)| over the samples."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < MIN_KS_SAMPLES:
        raise InsufficientSamplesError(f"KS needs at least {MIN_KS_SAMPLES} samples, got {samples.size}")
    if not sigma2 > 0:
        raise DegenerateRunError(f"KS against a Gaussian needs sigma2 > 0, got {sigma2}")
    return float(sps.kstest(samples, "norm", args=(mu, math.sqrt(sigma2))).statistic)


@dataclass
class RegionStats:
    """One gray region of one reconstruction."""
    level: float
    count: int
    mean: float
    variance: Optional[float]
    bin_edges: np.ndarray = field(repr=False)
    probabilities: np.ndarray = field(repr=False)
    below: int = 0
    above: int = 0
    mu: Optional[float] = None
    sigma2: Optional[float] = None
    ks: Optional[float] = None
    ks_threshold: Optional[float] = None
    note: str = ""

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def ks_pass(self) -> Optional[bool]:
        if self.ks is None or self.ks_threshold is None:
            return None
        return self.ks < self.ks_threshold

    def theoretical_probabilities(self) -> Optional[np.ndarray]:
        """Gaussian mass in each bin, when a variance prediction exists."""
        if self.mu is None or not self.sigma2:
            return None
        cdf = sps.norm.cdf(self.bin_edges, loc=self.mu, scale=math.sqrt(self.sigma2))
        return np.diff(cdf)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "level": self.level,
            "count": self.count,
            "mean": self.mean,
            "variance": self.variance,
            "mu": self.mu,
            "sigma2": self.sigma2,
            "ks": self.ks,
            "ks_threshold": self.ks_threshold,
            "ks_pass": self.ks_pass,
            "clamped_below": self.below,
            "clamped_above": self.above,
            "bins": int(self.probabilities.size),
            "note": self.note,
        }


def _histogram(values: np.ndarray, center: float, sigma: float, bins: int):
    if sigma <= 0 or not math.isfinite(sigma):
        return np.array([center, center]), np.array([1.0]), 0, 0
    lo, hi = center - HISTOGRAM_HALF_WIDTH * sigma, center + HISTOGRAM_HALF_WIDTH * sigma
    below = int(np.count_nonzero(values < lo))
    above = int(np.count_nonzero(values > hi))
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    return edges, counts / values.size, below, above


def region_statistics(
    recon: Reconstruction,
    regions: GrayRegionIndex,
    theory: Optional[TheoryPrediction] = None,
    bins: int = DEFAULT_BINS,
    alpha: float = 0.05,
) -> List[RegionStats]:
    """Mean, variance, histogram and (with theory) KS for every gray region."""
    if recon.M != regions.M:
        raise ShapeMismatchError(f"reconstruction has {recon.M} pixels, regions cover {regions.M}")
    out: List[RegionStats] = []
    for i, level in enumerate(regions.levels):
        values = regions.region_values(recon.values, i)
        n = int(values.size)
        mean = float(np.mean(values))
        variance = float(np.var(values, ddof=1)) if n >= 2 else None
        note = "" if n >= 2 else "variance undefined for a single-pixel region"

        mu = sigma2 = None
        if theory is not None:
            mu = theory.mean(recon.estimator, level)
            sigma2 = theory.sigma2(recon.estimator, level)

        center = mu if mu is not None else mean
        if sigma2 is not None and sigma2 > 0:
            spread = math.sqrt(sigma2)
        else:
            spread = math.sqrt(variance) if variance else 0.0
        edges, probs, below, above = _histogram(values, center, spread, bins)
        if below or above:
            logger.debug("Level %g: %d below / %d above the histogram range", level, below, above)

        ks = threshold = None
        if mu is not None and sigma2 is not None and sigma2 > 0:
            if n >= MIN_KS_SAMPLES:
                ks = ks_statistic(values, mu, sigma2)
                threshold = ks_threshold(n, alpha)
            else:
                note = f"region too small for KS ({n} pixels)"
                logger.warning("Level %g: %s", level, note)

        out.append(RegionStats(
            level=level, count=n, mean=mean, variance=variance, bin_edges=edges, probabilities=probs,
            below=below, above=above, mu=mu, sigma2=sigma2, ks=ks, ks_threshold=threshold, note=note,
        ))
    return out


@dataclass
class LinearityReport:
    """Least-squares line through (level, region mean)."""
    estimator: Estimator
    levels: List[float]
    means: List[float]
    slope: float
    intercept: float
    r2: float
    degenerate: bool = False
    predicted_slope: Optional[float] = None
    predicted_intercept: Optional[float] = None
    slope_se: Optional[float] = None
    intercept_se: Optional[float] = None

    @property
    def slope_rel_error(self) -> Optional[float]:
        if self.predicted_slope is None:
            return None
        if self.predicted_slope == 0.0:
            return abs(self.slope)
        return abs(self.slope - self.predicted_slope) / abs(self.predicted_slope)

    @property
    def intercept_error(self) -> Optional[float]:
        if self.predicted_intercept is None:
            return None
        return abs(self.intercept - self.predicted_intercept)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator.value,
            "levels": self.levels,
            "means": self.means,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "degenerate": self.degenerate,
            "predicted_slope": self.predicted_slope,
            "predicted_intercept": self.predicted_intercept,
            "slope_rel_error": self.slope_rel_error,
            "intercept_error": self.intercept_error,
            "slope_se": self.slope_se,
            "intercept_se": self.intercept_se,
        }


def _fit_standard_errors(stats: Sequence[RegionStats]) -> Tuple[Optional[float], Optional[float]]:
    """Sampling errors of the fitted slope and intercept from each region mean's spread."""
    spreads = [s.sigma2 if s.sigma2 is not None else s.variance for s in stats]
    if any(v is None for v in spreads):
        return None, None
    x = np.array([s.level for s in stats])
    var_y = np.array([v / s.count for v, s in zip(spreads, stats)])
    dx = x - x.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        return None, None
    w_slope = dx / sxx
    w_intercept = 1.0 / x.size - x.mean() * w_slope
    return (
        math.sqrt(float(np.dot(w_slope ** 2, var_y))),
        math.sqrt(float(np.dot(w_intercept ** 2, var_y))),
    )


def linearity_fit(
    stats: Sequence[RegionStats],
    estimator: Estimator,
    theory: Optional[TheoryPrediction] = None,
) -> LinearityReport:
    estimator = Estimator(estimator)
    levels = [s.level for s in stats]
    means = [s.mean for s in stats]
    if not levels:
        raise InsufficientSamplesError("a linear fit needs at least one region")

    y = np.asarray(means)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if len(set(levels)) < 2:
        # a single gray level pins no slope
        slope, intercept, degenerate = 0.0, float(y.mean()), True
    else:
        fit = sps.linregress(levels, means)
        slope, intercept, degenerate = float(fit.slope), float(fit.intercept), ss_tot == 0.0
    r2 = 0.0 if degenerate else min(1.0, float(fit.rvalue) ** 2)
    if degenerate:
        logger.warning("%s fit is degenerate (single level or no spread in region means)", estimator.value)

    line = theory.line(estimator) if theory is not None else None
    slope_se, intercept_se = _fit_standard_errors(stats)
    return LinearityReport(
        estimator=estimator,
        levels=levels,
        means=means,
        slope=slope,
        intercept=intercept,
        r2=r2,
        degenerate=degenerate,
        predicted_slope=line[0] if line else None,
        predicted_intercept=line[1] if line else None,
        slope_se=slope_se,
        intercept_se=intercept_se,
    )


@dataclass
class BandCheck:
    level: float
    mean: float
    mu: float
    bound: float

    @property
    def passed(self) -> bool:
        return abs(self.mean - self.mu) <= self.bound

    def to_dict(self) -> Dict[str, Any]:
        return {"level": self.level, "mean": self.mean, "mu": self.mu, "bound": self.bound, "passed": self.passed}


def mean_band_check(stats: Sequence[RegionStats], sigmas: float = BAND_SIGMAS) -> List[BandCheck]:
    """
    |region mean - μ| <= k σ / √N for every region with a predicted mean.
    σ² is the predicted variance when there is one, else the region's sample variance.
    """
    checks = []
    for s in stats:
        spread = s.sigma2 if s.sigma2 is not None else s.variance
        if s.mu is None or spread is None:
            continue
        checks.append(BandCheck(s.level, s.mean, s.mu, sigmas * math.sqrt(spread / s.count)))
    return checks
