"""
ghoststat Theory
Joint moments of the pattern law I and the transform F = f(I), the constants
C1..C4 that make every estimator's mean affine in the gray value, and the
variance of ΔG² assembled term by term from those moments.
"""

import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial import legendre

from ghoststat.core.errors import (
    DegenerateRunError,
    DistributionError,
    InsufficientSamplesError,
    ParameterError,
    VarianceAssemblyError,
)
from ghoststat.core.estimators import Estimator
from ghoststat.core.forward import NoiseModel
from ghoststat.core.imaging import GrayImage, GrayRegionIndex, build_region_index
from ghoststat.core.stochastic import (
    DistributionKind,
    DistributionSpec,
    SeedRecipe,
    TransformKind,
    TransformSpec,
    sample_iid,
)

logger = logging.getLogger("ghoststat.theory")

QUADRATURE_ORDER = 64
MOMENT_SLACK = 1e-12
VARIANCE_SLACK = 1e-12
MONTE_CARLO_STREAM = 2
MONTE_CARLO_BATCH = 1_000_000

# (p, q) exponents of E[I^p F^q] for each MomentSet field
MOMENT_EXPONENTS: Dict[str, Tuple[int, int]] = {
    "E_I": (1, 0),
    "E_I2": (2, 0),
    "E_F": (0, 1),
    "E_F2": (0, 2),
    "E_IF": (1, 1),
    "E_IF2": (1, 2),
    "E_I2F": (2, 1),
    "E_I2F2": (2, 2),
}


@dataclass(frozen=True)
class MomentSet:
    """The eight raw and joint moments every prediction is built from."""
    E_I: float
    E_I2: float
    E_F: float
    E_F2: float
    E_IF: float
    E_IF2: float
    E_I2F: float
    E_I2F2: float

    def __post_init__(self):
        values = asdict(self)
        if not all(math.isfinite(v) for v in values.values()):
            raise DistributionError(f"non-finite moment in {values}")
        if self.D_I < -MOMENT_SLACK * max(1.0, self.E_I2):
            raise DistributionError(f"negative D(I) = {self.D_I!r}")
        if self.D_F < -MOMENT_SLACK * max(1.0, self.E_F2):
            raise DistributionError(f"negative D(F) = {self.D_F!r}")
        if self.E_IF ** 2 > self.E_I2 * self.E_F2 + MOMENT_SLACK * max(1.0, self.E_I2 * self.E_F2):
            raise DistributionError("moments violate Cauchy-Schwarz: E(IF)^2 > E(I^2) E(F^2)")

    @property
    def D_I(self) -> float:
        return self.E_I2 - self.E_I ** 2

    @property
    def D_F(self) -> float:
        return self.E_F2 - self.E_F ** 2

    @property
    def cross(self) -> float:
        """E(IF) - E(I)E(F), the fluctuation every slope is proportional to."""
        return self.E_IF - self.E_I * self.E_F

    def to_dict(self) -> Dict[str, float]:
        d = asdict(self)
        d.update({"D_I": self.D_I, "D_F": self.D_F})
        return d


# ──────────────────────────────────────────────────────────────
# Moment engine
# ──────────────────────────────────────────────────────────────

def _power_integral(k: float, a: float, b: float) -> float:
    """∫_a^b x^k dx."""
    return (b ** (k + 1) - a ** (k + 1)) / (k + 1)


def _exp_integral(p: int, c: float, a: float, b: float) -> float:
    """∫_a^b x^p e^(cx) dx, c != 0."""
    def antiderivative(x: float) -> float:
        total = 0.0
        for j in range(p + 1):
            total += (-1) ** j * (math.factorial(p) / math.factorial(p - j)) * x ** (p - j) / c ** (j + 1)
        return math.exp(c * x) * total
    return antiderivative(b) - antiderivative(a)


def _log_integral(p: int, q: int, a: float, b: float) -> float:
    """∫_a^b x^p (ln x)^q dx, a > 0."""
    def antiderivative(x: float) -> float:
        lx = math.log(x)
        total = 0.0
        for j in range(q + 1):
            total += (-1) ** j * (math.factorial(q) / math.factorial(q - j)) * lx ** (q - j) / (p + 1) ** (j + 1)
        return x ** (p + 1) * total
    return antiderivative(b) - antiderivative(a)


def _uniform_closed_form(transform: TransformSpec, p: int, q: int, a: float, b: float) -> float:
    width = b - a
    if q == 0 or transform.kind is TransformKind.IDENTITY:
        return _power_integral(p + q, a, b) / width
    if transform.kind is TransformKind.POWER:
        return _power_integral(p + q * transform.k, a, b) / width
    if transform.kind is TransformKind.EXP:
        return _exp_integral(p, float(q), a, b) / width
    return _log_integral(p, q, a, b) / width


def _has_closed_form(transform: TransformSpec) -> bool:
    return transform.kind is not TransformKind.POWER or transform.integer_power


def _quadrature(transform: TransformSpec, p: int, q: int, a: float, b: float) -> float:
    nodes, weights = legendre.leggauss(QUADRATURE_ORDER)
    x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
    return 0.5 * float(np.dot(weights, x ** p * transform.apply(x) ** q))


def compute_moments(dist: DistributionSpec, transform: TransformSpec) -> MomentSet:
    """
    Exact moments of (I, F).

    Finitely supported laws are weighted sums over their atoms. Uniform laws
    use antiderivatives for identity, integer powers, exp and log, and
    Gauss-Legendre quadrature (order 64) for fractional powers.
    """
    transform.check_support(dist)
    atoms = dist.atoms()
    if atoms is not None:
        values, probs = atoms
        F = transform.apply(values)

        def joint(p: int, q: int) -> float:
            return math.fsum(probs * values ** p * F ** q)
    elif dist.kind is DistributionKind.UNIFORM:
        method = _uniform_closed_form if _has_closed_form(transform) else _quadrature

        def joint(p: int, q: int) -> float:
            return method(transform, p, q, dist.lo, dist.hi)
    else:
        raise DistributionError(f"no moment rule for {dist.describe()}")

    moments = MomentSet(**{name: joint(p, q) for name, (p, q) in MOMENT_EXPONENTS.items()})
    logger.debug("Moments for %s, F=%s: %s", dist.describe(), transform.describe(), moments.to_dict())
    return moments


def empirical_moments(
    dist: DistributionSpec,
    transform: TransformSpec,
    n: int,
    recipe: SeedRecipe,
    stream: int = MONTE_CARLO_STREAM,
) -> Tuple[MomentSet, Dict[str, float]]:
    """Monte Carlo means of the eight moments and their standard errors."""
    if n < 2:
        raise InsufficientSamplesError(f"Monte Carlo moments need n >= 2, got {n}")
    transform.check_support(dist)
    gen = recipe.generator_for(stream)
    sums: Dict[str, List[float]] = {name: [] for name in MOMENT_EXPONENTS}
    squares: Dict[str, List[float]] = {name: [] for name in MOMENT_EXPONENTS}
    remaining = n
    while remaining:
        size = min(remaining, MONTE_CARLO_BATCH)
        I = sample_iid(dist, size, gen)
        F = transform.apply(I)
        for name, (p, q) in MOMENT_EXPONENTS.items():
            g = I ** p * F ** q
            sums[name].append(float(np.sum(g)))
            squares[name].append(float(np.dot(g, g)))
        remaining -= size

    means: Dict[str, float] = {}
    errors: Dict[str, float] = {}
    for name in MOMENT_EXPONENTS:
        mean = math.fsum(sums[name]) / n
        var = max(0.0, math.fsum(squares[name]) / n - mean ** 2)
        means[name] = mean
        errors[name] = math.sqrt(var * n / (n - 1) / n)
    return MomentSet(**means), errors


# ──────────────────────────────────────────────────────────────
# Constants and means
# ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TheoryConstants:
    C1: float
    C2: float
    c3: Optional[float]
    c4: Optional[float]
    gamma: float
    sum_d: float
    M: int
    noise_mean: float = 0.0

    @property
    def C3(self) -> float:
        if self.c3 is None:
            raise DegenerateRunError("C3 is undefined: the mean bucket or E(F) is 0")
        return self.c3

    @property
    def C4(self) -> float:
        if self.c4 is None:
            raise DegenerateRunError("C4 is undefined: E(I) is 0 while the noise mean is not")
        return self.c4

    def to_dict(self) -> Dict[str, Any]:
        return {
            "C1": self.C1, "C2": self.C2, "C3": self.c3, "C4": self.c4,
            "gamma": self.gamma, "sum_d": self.sum_d, "M": self.M, "noise_mean": self.noise_mean,
        }


def theoretical_constants(
    moments: MomentSet,
    image: GrayImage,
    gamma: float,
    noise: Optional[NoiseModel] = None,
) -> TheoryConstants:
    """C1..C4 for an image; a noise mean shifts every constant that involves ⟨S⟩."""
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    e_mean = noise.mean if noise is not None else 0.0
    sum_d = image.total
    C1 = gamma * moments.cross
    mean_bucket = gamma * sum_d * moments.E_I + e_mean
    C2 = mean_bucket * moments.E_F
    denom = mean_bucket * moments.E_F
    c3 = C1 / denom if denom != 0.0 else None
    if e_mean == 0.0:
        c4: Optional[float] = sum_d / image.M
    elif moments.E_I != 0.0:
        c4 = (sum_d + e_mean / (gamma * moments.E_I)) / image.M
    else:
        c4 = None
    return TheoryConstants(C1=C1, C2=C2, c3=c3, c4=c4, gamma=gamma, sum_d=sum_d, M=image.M, noise_mean=e_mean)


def theoretical_mean(estimator: Estimator, d: float, constants: TheoryConstants, T: Optional[int] = None) -> float:
    """Expected reconstruction value at gray level d. T=None drops the (1 - 1/T) factor."""
    estimator = Estimator(estimator)
    if estimator is Estimator.G2:
        return constants.C2 + constants.C1 * d
    if estimator is Estimator.DELTA_G2:
        factor = 1.0 if T is None else 1.0 - 1.0 / T
        return factor * constants.C1 * d
    if estimator is Estimator.NORMALIZED_G2:
        return 1.0 + constants.C3 * d
    return constants.C1 * (d - constants.C4)


def predicted_line(estimator: Estimator, constants: TheoryConstants, T: Optional[int] = None) -> Tuple[float, float]:
    """(slope, intercept) of the mean as a function of d."""
    intercept = theoretical_mean(estimator, 0.0, constants, T)
    return theoretical_mean(estimator, 1.0, constants, T) - intercept, intercept


# ──────────────────────────────────────────────────────────────
# Variance of ΔG²
# ──────────────────────────────────────────────────────────────

def variance_terms(
    moments: MomentSet,
    image: GrayImage,
    d_n: float,
    gamma: float,
    T: int,
    noise: Optional[NoiseModel] = None,
) -> Dict[str, float]:
    """
    Every intermediate of D{[S - E(S)][F_n - E(F)]} for a pixel of gray value d_n.

    S̃ is the bucket with pixel n removed (plus the noise when present), so it
    is independent of F_n. Returned keys end with ``sigma2`` = D / T.
    """
    if T < 2:
        raise InsufficientSamplesError(f"variance prediction needs T >= 2, got {T}")
    m = moments
    g = gamma
    e_mean = noise.mean if noise is not None else 0.0
    e_var = noise.var if noise is not None else 0.0

    E_St = g * (image.total - d_n) * m.E_I + e_mean
    D_St = g ** 2 * (image.total_squared - d_n ** 2) * m.D_I + e_var
    E_St2 = E_St ** 2 + D_St

    E_S = E_St + g * d_n * m.E_I
    D_S = D_St + g ** 2 * d_n ** 2 * m.D_I
    E_SF = E_St * m.E_F + g * d_n * m.E_IF
    E_SF2 = E_St * m.E_F2 + g * d_n * m.E_IF2
    E_S2F = E_St2 * m.E_F + 2 * g * d_n * E_St * m.E_IF + g ** 2 * d_n ** 2 * m.E_I2F
    E_S2F2 = E_St2 * m.E_F2 + 2 * g * d_n * E_St * m.E_IF2 + g ** 2 * d_n ** 2 * m.E_I2F2
    D_SF = E_S2F2 - E_SF ** 2

    a, b = E_S, m.E_F
    parts = [
        a * (6 * E_SF * b - 2 * E_SF2),
        a ** 2 * (m.D_F - 2 * b ** 2),
        D_S * b ** 2,
        -2 * E_S2F * b,
        D_SF,
    ]
    D = math.fsum(parts)
    terms = {
        "d_n": d_n, "E_S_tilde": E_St, "D_S_tilde": D_St, "E_S_tilde2": E_St2,
        "E_S": E_S, "D_S": D_S, "E_SF": E_SF, "E_SF2": E_SF2,
        "E_S2F": E_S2F, "E_S2F2": E_S2F2, "D_SF": D_SF, "D": D,
    }

    scale = max(abs(x) for x in parts + [E_S2F2, E_SF ** 2])
    if abs(D) <= VARIANCE_SLACK * scale:
        D = 0.0
    elif D < 0:
        raise VarianceAssemblyError(f"assembled variance is negative ({D!r}) at d={d_n}", terms)
    terms["D"] = D
    terms["sigma2"] = D / T
    return terms


def theoretical_variance_delta_g2(
    moments: MomentSet,
    image: GrayImage,
    d_n: float,
    gamma: float,
    T: int,
    noise: Optional[NoiseModel] = None,
) -> float:
    """σ_n² of ΔG² at a pixel of gray value d_n."""
    return variance_terms(moments, image, d_n, gamma, T, noise)["sigma2"]


# ──────────────────────────────────────────────────────────────
# Per-level prediction
# ──────────────────────────────────────────────────────────────

@dataclass
class LevelPrediction:
    d: float
    pixels: int
    mu: Dict[str, Optional[float]]
    sigma2: float
    terms: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"d": self.d, "pixels": self.pixels, "mu": self.mu, "sigma2_DeltaG2": self.sigma2, "terms": self.terms}


@dataclass
class TheoryPrediction:
    """Means for all estimators and the ΔG² variance at every gray level of an image."""
    constants: TheoryConstants
    moments: MomentSet
    levels: List[LevelPrediction]
    T: int
    gamma: float
    noise: NoiseModel
    transform: Optional[TransformSpec] = None

    def level_for(self, d: float, tolerance: float = 1e-9) -> LevelPrediction:
        for level in self.levels:
            if abs(level.d - d) <= tolerance:
                return level
        raise KeyError(f"no predicted level at d={d}")

    def mean(self, estimator: Estimator, d: float) -> Optional[float]:
        return self.level_for(d).mu.get(Estimator(estimator).value)

    def sigma2(self, estimator: Estimator, d: float) -> Optional[float]:
        """Only ΔG² has a variance prediction."""
        if Estimator(estimator) is not Estimator.DELTA_G2:
            return None
        return self.level_for(d).sigma2

    def line(self, estimator: Estimator) -> Optional[Tuple[float, float]]:
        try:
            return predicted_line(estimator, self.constants, self.T)
        except DegenerateRunError:
            return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T": self.T,
            "gamma": self.gamma,
            "noise": self.noise.to_dict(),
            "transform": self.transform.to_dict() if self.transform else None,
            "moments": self.moments.to_dict(),
            "constants": self.constants.to_dict(),
            "delta_g2_factor": 1.0 - 1.0 / self.T,
            "levels": [level.to_dict() for level in self.levels],
        }


def predict(
    moments: MomentSet,
    image: GrayImage,
    gamma: float,
    T: int,
    noise: Optional[NoiseModel] = None,
    regions: Optional[GrayRegionIndex] = None,
    transform: Optional[TransformSpec] = None,
) -> TheoryPrediction:
    noise = noise or NoiseModel.none()
    regions = regions or build_region_index(image)
    constants = theoretical_constants(moments, image, gamma, noise)
    levels: List[LevelPrediction] = []
    for d, size in zip(regions.levels, regions.sizes):
        mu: Dict[str, Optional[float]] = {}
        for estimator in Estimator:
            try:
                mu[estimator.value] = theoretical_mean(estimator, d, constants, T)
            except DegenerateRunError as e:
                logger.warning("No %s mean at d=%g: %s", estimator.value, d, e)
                mu[estimator.value] = None
        terms = variance_terms(moments, image, d, gamma, T, noise)
        levels.append(LevelPrediction(d=d, pixels=size, mu=mu, sigma2=terms["sigma2"], terms=terms))
    return TheoryPrediction(
        constants=constants, moments=moments, levels=levels, T=T, gamma=gamma, noise=noise, transform=transform,
    )
