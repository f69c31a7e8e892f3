"""
ghoststat Stochastic Layer
The i.i.d. pixel law, the transform family F = f(I), and counter-based
reproducible sampling.

Every pattern value is a pure function of (master_seed, t, m): the value at
frame t, pixel m is built from the (t*M + m)-th 64-bit word of a Philox-4x64
stream keyed by (master_seed, 0). Any frame range can be regenerated in
isolation, so results never depend on worker count or evaluation order.
"""

import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ghoststat.core.errors import DistributionError, TransformDomainError
from ghoststat.core.imaging import PatternFrame

logger = logging.getLogger("ghoststat.stochastic")

GENERATOR_NAME = "numpy.random.Philox (4x64, 10 rounds)"
PATTERN_STREAM = 0
NOISE_STREAM = 1
WORDS_PER_COUNTER = 4
PROB_SUM_TOLERANCE = 1e-12


# ──────────────────────────────────────────────────────────────
# Pixel law
# ──────────────────────────────────────────────────────────────

class DistributionKind(str, Enum):
    UNIFORM = "uniform"
    BERNOULLI = "bernoulli"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class DistributionSpec:
    """The law of every pattern pixel."""
    kind: DistributionKind
    lo: float = 0.0
    hi: float = 1.0
    p: float = 0.5
    value0: float = 0.0
    value1: float = 1.0
    values: Tuple[float, ...] = ()
    probs: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", DistributionKind(self.kind))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(q) for q in self.probs))
        self._validate()

    def _validate(self) -> None:
        if self.kind is DistributionKind.UNIFORM:
            if not (0.0 <= self.lo < self.hi) or not math.isfinite(self.hi):
                raise DistributionError(f"uniform needs 0 <= lo < hi, got lo={self.lo}, hi={self.hi}")
        elif self.kind is DistributionKind.BERNOULLI:
            if not (0.0 < self.p < 1.0):
                raise DistributionError(f"bernoulli needs p in (0, 1), got {self.p}")
            if self.value0 < 0 or self.value1 < 0 or self.value0 == self.value1:
                raise DistributionError(
                    f"bernoulli needs distinct non-negative values, got {self.value0}, {self.value1}"
                )
        else:
            if not self.values or len(self.values) != len(self.probs):
                raise DistributionError("discrete needs equally many values and probs (at least one)")
            if any(v < 0 or not math.isfinite(v) for v in self.values):
                raise DistributionError(f"discrete values must be finite and >= 0: {self.values}")
            if any(q < 0 for q in self.probs):
                raise DistributionError(f"discrete probs must be >= 0: {self.probs}")
            if abs(math.fsum(self.probs) - 1.0) > PROB_SUM_TOLERANCE:
                raise DistributionError(f"discrete probs must sum to 1, got {math.fsum(self.probs)!r}")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "DistributionSpec":
        return cls(DistributionKind.UNIFORM, lo=float(lo), hi=float(hi))

    @classmethod
    def bernoulli(cls, p: float, value0: float = 0.0, value1: float = 1.0) -> "DistributionSpec":
        return cls(DistributionKind.BERNOULLI, p=float(p), value0=float(value0), value1=float(value1))

    @classmethod
    def discrete(cls, values: Sequence[float], probs: Sequence[float]) -> "DistributionSpec":
        return cls(DistributionKind.DISCRETE, values=tuple(values), probs=tuple(probs))

    def atoms(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """(values, probs) of a finitely supported law, None for continuous ones."""
        if self.kind is DistributionKind.BERNOULLI:
            return np.array([self.value0, self.value1]), np.array([1.0 - self.p, self.p])
        if self.kind is DistributionKind.DISCRETE:
            probs = np.array(self.probs)
            keep = probs > 0
            return np.array(self.values)[keep], probs[keep]
        return None

    @property
    def support_min(self) -> float:
        if self.kind is DistributionKind.UNIFORM:
            return self.lo
        values, _ = self.atoms()
        return float(values.min())

    @property
    def strictly_positive(self) -> bool:
        return self.support_min > 0.0

    @property
    def mean(self) -> float:
        if self.kind is DistributionKind.UNIFORM:
            return 0.5 * (self.lo + self.hi)
        values, probs = self.atoms()
        return float(np.dot(values, probs))

    def describe(self) -> str:
        if self.kind is DistributionKind.UNIFORM:
            return f"uniform({self.lo:g}, {self.hi:g})"
        if self.kind is DistributionKind.BERNOULLI:
            return f"bernoulli({self.p:g}, {self.value0:g}, {self.value1:g})"
        return f"discrete({list(self.values)}, {list(self.probs)})"

    def to_dict(self) -> Dict[str, Any]:
        if self.kind is DistributionKind.UNIFORM:
            return {"kind": self.kind.value, "lo": self.lo, "hi": self.hi}
        if self.kind is DistributionKind.BERNOULLI:
            return {"kind": self.kind.value, "p": self.p, "value0": self.value0, "value1": self.value1}
        return {"kind": self.kind.value, "values": list(self.values), "probs": list(self.probs)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DistributionSpec":
        kind = str(data.get("kind", "")).lower()
        try:
            if kind == DistributionKind.UNIFORM.value:
                return cls.uniform(data.get("lo", 0.0), data.get("hi", 1.0))
            if kind == DistributionKind.BERNOULLI.value:
                return cls.bernoulli(data.get("p", 0.5), data.get("value0", 0.0), data.get("value1", 1.0))
            if kind == DistributionKind.DISCRETE.value:
                return cls.discrete(data.get("values", []), data.get("probs", []))
        except (TypeError, ValueError) as e:
            if isinstance(e, DistributionError):
                raise
            raise DistributionError(f"Bad {kind} parameters: {e}") from e
        raise DistributionError(f"Unknown distribution kind: {data.get('kind')!r}")


# ──────────────────────────────────────────────────────────────
# Transforms
# ──────────────────────────────────────────────────────────────

class TransformKind(str, Enum):
    IDENTITY = "identity"
    POWER = "power"
    EXP = "exp"
    LOG = "log"


LOG_ZERO_MESSAGE = (
    "log is undefined at 0; patterns that can take the value 0 "
    "(e.g. binary 0/1 modulation) cannot be reconstructed with F = ln(I)"
)


@dataclass(frozen=True)
class TransformSpec:
    """F = f(I) used in place of I inside the correlations."""
    kind: TransformKind = TransformKind.IDENTITY
    k: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind(self.kind))
        if self.kind is TransformKind.POWER and not (self.k > 0 and math.isfinite(self.k)):
            raise DistributionError(f"power transform needs a positive exponent, got {self.k}")

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        """Parse ``identity``, ``exp``, ``log``, ``power:3`` or ``power(3)``."""
        raw = str(text).strip().lower()
        if raw.startswith(TransformKind.POWER.value):
            arg = raw[len(TransformKind.POWER.value):].strip(" :()")
            try:
                return cls(TransformKind.POWER, float(arg))
            except ValueError as e:
                raise DistributionError(f"Bad power exponent in {text!r}") from e
        try:
            return cls(TransformKind(raw))
        except ValueError as e:
            raise DistributionError(f"Unknown transform: {text!r}") from e

    @property
    def integer_power(self) -> bool:
        return self.kind is TransformKind.POWER and float(self.k).is_integer()

    @property
    def label(self) -> str:
        if self.kind is TransformKind.POWER:
            return f"power{self.k:g}"
        return self.kind.value

    def describe(self) -> str:
        if self.kind is TransformKind.POWER:
            return f"power({self.k:g})"
        return self.kind.value

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"kind": self.kind.value}
        if self.kind is TransformKind.POWER:
            d["k"] = self.k
        return d

    @property
    def needs_positive_support(self) -> bool:
        return self.kind is TransformKind.LOG or (self.kind is TransformKind.POWER and not self.integer_power)

    def check_support(self, dist: DistributionSpec) -> None:
        """Reject pairings whose law puts mass (or density) at 0."""
        if self.needs_positive_support and not dist.strictly_positive:
            if self.kind is TransformKind.LOG:
                raise TransformDomainError(f"{LOG_ZERO_MESSAGE}; {dist.describe()} reaches 0")
            raise TransformDomainError(
                f"fractional power({self.k:g}) needs a strictly positive support; {dist.describe()} reaches 0"
            )

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Elementwise f on raw arrays; raises naming the first offending pixel."""
        values = np.asarray(values, dtype=np.float64)
        if self.kind is TransformKind.IDENTITY:
            return values
        if self.kind is TransformKind.EXP:
            return np.exp(values)
        if self.needs_positive_support:
            bad = np.flatnonzero(values.ravel() <= 0.0)
            if bad.size:
                pixel = int(bad[0] % values.shape[-1]) if values.ndim > 1 else int(bad[0])
                value = float(values.ravel()[bad[0]])
                reason = LOG_ZERO_MESSAGE if self.kind is TransformKind.LOG else "fractional power of 0"
                raise TransformDomainError(f"{reason} (pixel {pixel}, value {value:g})", pixel=pixel, value=value)
        if self.kind is TransformKind.LOG:
            return np.log(values)
        return np.power(values, self.k)


IDENTITY = TransformSpec(TransformKind.IDENTITY)


def apply_transform(frame: PatternFrame, transform: TransformSpec) -> PatternFrame:
    """F_m = f(I_m) for one frame."""
    if transform.kind is TransformKind.IDENTITY:
        return frame
    return PatternFrame(transform.apply(frame.values))


# ──────────────────────────────────────────────────────────────
# Counter-based sampling
# ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SeedRecipe:
    """Master seed plus the word rule (t, m) -> t*M + m."""
    master_seed: int
    generator: str = field(default=GENERATOR_NAME, compare=False)

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2 ** 64):
            raise DistributionError(f"master seed must fit in 64 bits, got {self.master_seed}")
        object.__setattr__(self, "master_seed", int(self.master_seed))

    @staticmethod
    def word_index(t: int, m: int, M: int) -> int:
        return t * M + m

    def uniforms(self, start_word: int, count: int, stream: int = PATTERN_STREAM) -> np.ndarray:
        """Doubles in [0, 1) built from words [start_word, start_word + count) of a stream."""
        key = np.array([self.master_seed, stream], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key, counter=start_word // WORDS_PER_COUNTER))
        skip = start_word % WORDS_PER_COUNTER
        if skip:
            gen.random(skip)
        return gen.random(count)

    def generator_for(self, stream: int) -> np.random.Generator:
        """A sequential generator on a side stream (noise, Monte Carlo checks)."""
        key = np.array([self.master_seed, stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def to_dict(self) -> Dict[str, Any]:
        return {"master_seed": self.master_seed, "generator": self.generator, "word_rule": "t*M + m"}


def _draw(dist: DistributionSpec, u: np.ndarray) -> np.ndarray:
    if dist.kind is DistributionKind.UNIFORM:
        return dist.lo + (dist.hi - dist.lo) * u
    if dist.kind is DistributionKind.BERNOULLI:
        return np.where(u < dist.p, dist.value1, dist.value0)
    values, probs = dist.atoms()
    cdf = np.cumsum(probs)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), values.size - 1)
    return values[idx]


def sample_block(dist: DistributionSpec, M: int, start: int, stop: int, recipe: SeedRecipe) -> np.ndarray:
    """Frames [start, stop) as a (stop - start, M) array."""
    if M <= 0 or start < 0 or stop < start:
        raise DistributionError(f"Bad block request: M={M}, frames [{start}, {stop})")
    u = recipe.uniforms(SeedRecipe.word_index(start, 0, M), (stop - start) * M)
    return _draw(dist, u).reshape(stop - start, M)


def sample_pattern(dist: DistributionSpec, M: int, frame_index: int, recipe: SeedRecipe) -> PatternFrame:
    """Frame t of the reproducible pattern sequence."""
    if frame_index < 0:
        raise DistributionError(f"frame index must be >= 0, got {frame_index}")
    return PatternFrame(sample_block(dist, M, frame_index, frame_index + 1, recipe)[0])


def sample_iid(dist: DistributionSpec, n: int, generator: np.random.Generator) -> np.ndarray:
    """n independent draws from a sequential generator (side streams only)."""
    return _draw(dist, generator.random(n))
