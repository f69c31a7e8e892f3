"""
ghoststat Errors
Exception hierarchy shared by every module. Library code raises these;
the CLI maps them to exit codes.
"""

from typing import Any, Dict, Optional


class GhostStatError(Exception):
    """Base class for all ghoststat errors."""

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self)}


class ImageError(GhostStatError, ValueError):
    """Invalid image dimensions or gray values."""


class FormatError(GhostStatError, ValueError):
    """A file on disk does not match the expected format."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ParameterError(GhostStatError, ValueError):
    """Invalid scalar run parameter (gamma, T, noise variance, thread count)."""


class DistributionError(GhostStatError, ValueError):
    """Invalid pixel-law parameters."""


class TransformDomainError(GhostStatError, ValueError):
    """A transform was applied outside its domain (log or fractional power at 0)."""

    def __init__(self, message: str, pixel: Optional[int] = None, value: Optional[float] = None):
        self.pixel = pixel
        self.value = value
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        d = super().to_dict()
        d.update({"pixel": self.pixel, "value": self.value})
        return d


class ShapeMismatchError(GhostStatError, ValueError):
    """Array lengths that must agree do not."""


class InsufficientSamplesError(GhostStatError, ValueError):
    """Too few buckets, frames, region pixels or gray levels."""


class DegenerateRunError(GhostStatError, ArithmeticError):
    """An estimator or constant has a zero denominator."""


class VarianceAssemblyError(GhostStatError, ArithmeticError):
    """The assembled variance came out negative. Carries every intermediate term."""

    def __init__(self, message: str, terms: Dict[str, float]):
        self.terms = dict(terms)
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        d = super().to_dict()
        d["terms"] = self.terms
        return d


class ConfigError(GhostStatError, ValueError):
    """Invalid run configuration, located to a file line when possible."""

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, key: Optional[str] = None):
        self.path = path
        self.line = line
        self.key = key
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        prefix = f"{key}: " if key else ""
        super().__init__(f"{where}{prefix}{message}")
