"""
ghoststat Configuration Management
Run configuration merged from defaults, GHOSTSTAT_* environment variables,
shipped presets, a config file (YAML, JSON or flat key = value text) and
command-line overrides, in that order.
"""

import os
import copy
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import yaml

from ghoststat import DEFAULT_OUT_DIR
from ghoststat.core.errors import ConfigError, GhostStatError
from ghoststat.core.estimators import Estimator
from ghoststat.core.forward import NoiseModel
from ghoststat.core.imaging import CardLayout, GrayImage, make_test_card
from ghoststat.core.stochastic import DistributionSpec, TransformSpec

logger = logging.getLogger("ghoststat.config")

PRESETS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets")
LOG_LEVELS = ("debug", "info", "warning", "error", "critical")

# ──────────────────────────────────────────────────────────────
# Default Configuration
# ──────────────────────────────────────────────────────────────

DEFAULT_CONFIG: Dict[str, Any] = {
    "name": "default",
    "image": {
        "source": "card",
        "width": 32,
        "height": 32,
        "levels": [0.0, 0.4, 0.7, 1.0],
        "layout": "stripes",
        "fractions": None,
        "tolerance": 1e-9,
    },
    "distribution": {"kind": "uniform", "lo": 0.1, "hi": 1.0},
    "transforms": ["identity"],
    "estimators": ["DeltaG2"],
    "T": 10000,
    "gamma": 1.0,
    "noise": {"kind": "none", "mean": 0.0, "var": 0.0},
    "seed": 20240601,
    "out": DEFAULT_OUT_DIR,
    "threads": 0,
    "analysis": {"bins": 51, "alpha": 0.05},
    "log_level": "info",
}

# Free-form sub-mappings: their keys are validated by the object they build
OPEN_SECTIONS = ("distribution", "noise")

ENV_MAPPINGS = {
    "GHOSTSTAT_OUT": ("out", str),
    "GHOSTSTAT_LOG_LEVEL": ("log_level", str),
    "GHOSTSTAT_THREADS": ("threads", int),
}


# ──────────────────────────────────────────────────────────────
# File parsing
# ──────────────────────────────────────────────────────────────

Origin = Tuple[str, Optional[int]]


def _yaml_lines(node: Any, prefix: str, out: Dict[str, int]) -> None:
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = f"{prefix}{key_node.value}"
            out[key] = key_node.start_mark.line + 1
            _yaml_lines(value_node, f"{key}.", out)


def _json_lines(text: str, data: Any, prefix: str, out: Dict[str, int]) -> None:
    if not isinstance(data, dict):
        return
    lines = text.splitlines()
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        needle = f'"{key}"'
        out[dotted] = next((i + 1 for i, line in enumerate(lines) if needle in line), None)
        _json_lines(text, value, f"{dotted}.", out)


def _flat_value(raw: str) -> Any:
    raw = raw.strip()
    if raw.startswith("[") or "," not in raw:
        return yaml.safe_load(raw) if raw else None
    return [yaml.safe_load(part.strip()) for part in raw.split(",") if part.strip()]


def _set_dotted(target: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    d = target
    for key in keys[:-1]:
        if not isinstance(d.get(key), dict):
            d[key] = {}
        d = d[key]
    d[keys[-1]] = value


def parse_config_file(path: str) -> Tuple[Dict[str, Any], Dict[str, int]]:
    """Parse a config file into a nested mapping plus a dotted-key -> line map."""
    if not os.path.isfile(path):
        raise ConfigError("config file not found", path=path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    lines: Dict[str, int] = {}
    suffix = os.path.splitext(path)[1].lower()

    if suffix in (".yaml", ".yml"):
        try:
            data = yaml.safe_load(text) or {}
            _yaml_lines(yaml.compose(text), "", lines)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {getattr(e, 'problem', e)}", path=path,
                              line=mark.line + 1 if mark else None) from e
    elif suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e
        _json_lines(text, data, "", lines)
    else:
        data = {}
        for number, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError("expected 'key = value'", path=path, line=number)
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if not key:
                raise ConfigError("empty key", path=path, line=number)
            try:
                _set_dotted(data, key, _flat_value(raw))
            except yaml.YAMLError as e:
                raise ConfigError(f"cannot parse value {raw!r}", path=path, line=number, key=key) from e
            lines[key] = number

    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", path=path)
    return data, lines


# ──────────────────────────────────────────────────────────────
# Presets
# ──────────────────────────────────────────────────────────────

def list_presets() -> List[str]:
    if not os.path.isdir(PRESETS_DIR):
        return []
    return sorted(os.path.splitext(f)[0] for f in os.listdir(PRESETS_DIR) if f.endswith(".yaml"))


def preset_path(name: str) -> str:
    path = os.path.join(PRESETS_DIR, f"{name}.yaml")
    if not os.path.isfile(path):
        raise ConfigError(f"unknown preset {name!r} (available: {', '.join(list_presets())})", key="preset")
    return path


# ──────────────────────────────────────────────────────────────
# Run configuration
# ──────────────────────────────────────────────────────────────

@dataclass
class RunConfig:
    """Validated parameters of one simulate/reconstruct/analyze run."""
    name: str
    image_source: str
    width: int
    height: int
    levels: List[float]
    layout: str
    fractions: Optional[List[float]]
    tolerance: float
    distribution: DistributionSpec
    transforms: List[TransformSpec]
    estimators: List[Estimator]
    T: int
    gamma: float
    noise: NoiseModel
    seed: int
    out: str
    threads: int = 0
    bins: int = 51
    alpha: float = 0.05
    log_level: str = "info"
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def make_image(self) -> GrayImage:
        from ghoststat.io.pgm import read_pgm

        if self.image_source == "card":
            return make_test_card(self.width, self.height, self.levels, self.layout, self.fractions)
        return read_pgm(self.image_source)

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.raw)


class ConfigManager:
    """Builds a RunConfig layer by layer, remembering where each key came from."""

    def __init__(self, use_env: bool = True):
        self._config: Dict[str, Any] = copy.deepcopy(DEFAULT_CONFIG)
        self._origins: Dict[str, Origin] = {}
        if use_env:
            self._apply_env_overrides()

    # ── layers ──

    def _deep_merge(self, base: dict, override: dict, origin: str, lines: Dict[str, int], prefix: str = "") -> None:
        for key, value in override.items():
            dotted = f"{prefix}{key}"
            self._origins[dotted] = (origin, lines.get(dotted))
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._deep_merge(base[key], value, origin, lines, f"{dotted}.")
            else:
                base[key] = copy.deepcopy(value)

    def _apply_env_overrides(self) -> None:
        """GHOSTSTAT_* variables."""
        for env_key, (key, cast) in ENV_MAPPINGS.items():
            value = os.environ.get(env_key)
            if value is None or value == "":
                continue
            try:
                self._config[key] = cast(value)
            except ValueError as e:
                raise ConfigError(f"bad value {value!r} in ${env_key}", key=key) from e
            self._origins[key] = (f"${env_key}", None)

    def apply_preset(self, name: str) -> None:
        path = preset_path(name)
        data, lines = parse_config_file(path)
        self._deep_merge(self._config, data, path, lines)
        logger.debug("Applied preset %s", name)

    def apply_file(self, path: str) -> None:
        data, lines = parse_config_file(path)
        self._deep_merge(self._config, data, path, lines)
        logger.debug("Applied config file %s", path)

    def apply_overrides(self, overrides: Dict[str, Any], origin: str = "command line") -> None:
        """Dotted keys from CLI flags; None values are skipped."""
        for dotted, value in overrides.items():
            if value is None:
                continue
            _set_dotted(self._config, dotted, value)
            self._origins[dotted] = (origin, None)

    def get(self, *keys: str, default: Any = None) -> Any:
        d = self._config
        for key in keys:
            if not isinstance(d, dict) or key not in d:
                return default
            d = d[key]
        return d

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._config)

    # ── validation ──

    def _error(self, key: str, message: str) -> ConfigError:
        origin, line = self._lookup_origin(key)
        return ConfigError(message, path=origin, line=line, key=key)

    def _lookup_origin(self, key: str) -> Origin:
        parts = key.split(".")
        while parts:
            hit = self._origins.get(".".join(parts))
            if hit:
                return hit
            parts.pop()
        return ("defaults", None)

    def _check_unknown(self, data: Dict[str, Any], reference: Dict[str, Any], prefix: str = "") -> None:
        for key, value in data.items():
            dotted = f"{prefix}{key}"
            if key not in reference:
                raise self._error(dotted, "unknown key")
            if isinstance(reference[key], dict) and dotted not in OPEN_SECTIONS:
                if not isinstance(value, dict):
                    raise self._error(dotted, "expected a mapping")
                self._check_unknown(value, reference[key], f"{dotted}.")

    def _number(self, key: str, cast=float) -> Any:
        value = self.get(*key.split("."))
        try:
            if cast is int and isinstance(value, float) and not value.is_integer():
                raise ValueError
            if isinstance(value, bool):
                raise ValueError
            return cast(value)
        except (TypeError, ValueError):
            raise self._error(key, f"expected {'an integer' if cast is int else 'a number'}, got {value!r}") from None

    def _list(self, key: str) -> List[Any]:
        value = self.get(*key.split("."))
        if value is None:
            return []
        return list(value) if isinstance(value, (list, tuple)) else [value]

    def build(self) -> RunConfig:
        """Validate the merged layers into a RunConfig."""
        self._check_unknown(self._config, DEFAULT_CONFIG)

        T = self._number("T", int)
        if T < 2:
            raise self._error("T", f"T must be >= 2, got {T}")
        gamma = self._number("gamma")
        if not gamma > 0:
            raise self._error("gamma", f"gamma must be positive, got {gamma}")
        seed = self._number("seed", int)
        if not 0 <= seed < 2 ** 64:
            raise self._error("seed", "seed must fit in an unsigned 64-bit integer")
        threads = self._number("threads", int)
        if threads < 0:
            raise self._error("threads", "threads must be >= 0 (0 = one per CPU)")
        bins = self._number("analysis.bins", int)
        if bins < 1:
            raise self._error("analysis.bins", "need at least one bin")
        alpha = self._number("analysis.alpha")
        if not 0 < alpha < 1:
            raise self._error("analysis.alpha", "alpha must lie in (0, 1)")
        log_level = str(self.get("log_level")).lower()
        if log_level not in LOG_LEVELS:
            raise self._error("log_level", f"expected one of {', '.join(LOG_LEVELS)}")

        try:
            dist = DistributionSpec.from_dict(self.get("distribution") or {})
        except GhostStatError as e:
            raise self._error("distribution", str(e)) from e
        try:
            noise = NoiseModel.from_dict(self.get("noise"))
        except GhostStatError as e:
            raise self._error("noise", str(e)) from e

        transforms: List[TransformSpec] = []
        for item in self._list("transforms"):
            try:
                transform = TransformSpec.parse(str(item))
                transform.check_support(dist)
            except GhostStatError as e:
                raise self._error("transforms", str(e)) from e
            transforms.append(transform)
        if not transforms:
            raise self._error("transforms", "at least one transform is required")

        estimators: List[Estimator] = []
        for item in self._list("estimators"):
            try:
                estimators.append(Estimator.parse(str(item)))
            except ValueError as e:
                raise self._error("estimators", str(e)) from e
        if not estimators:
            raise self._error("estimators", "at least one estimator is required")

        source = str(self.get("image", "source"))
        if source != "card" and not os.path.isfile(source):
            raise self._error("image.source", f"image file not found: {source}")
        layout = str(self.get("image", "layout"))
        if layout not in [c.value for c in CardLayout]:
            raise self._error("image.layout", f"expected one of {[c.value for c in CardLayout]}")
        fractions = self.get("image", "fractions")
        try:
            levels = [float(v) for v in self._list("image.levels")]
            fractions = [float(v) for v in fractions] if fractions else None
        except (TypeError, ValueError):
            raise self._error("image.levels", "levels and fractions must be numbers") from None

        config = RunConfig(
            name=str(self.get("name")),
            image_source=source,
            width=self._number("image.width", int),
            height=self._number("image.height", int),
            levels=levels,
            layout=layout,
            fractions=fractions,
            tolerance=self._number("image.tolerance"),
            distribution=dist,
            transforms=transforms,
            estimators=list(dict.fromkeys(estimators)),
            T=T,
            gamma=gamma,
            noise=noise,
            seed=seed,
            out=str(self.get("out")),
            threads=threads,
            bins=bins,
            alpha=alpha,
            log_level=log_level,
            raw=self.to_dict(),
        )
        if source == "card":
            try:
                config.make_image()
            except GhostStatError as e:
                raise self._error("image", str(e)) from e
        return config


def load_run_config(
    preset: Optional[str] = None,
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    use_env: bool = True,
) -> RunConfig:
    """defaults -> env -> preset -> file -> overrides, validated."""
    manager = ConfigManager(use_env=use_env)
    if preset:
        manager.apply_preset(preset)
    if config_path:
        manager.apply_file(config_path)
    if overrides:
        manager.apply_overrides(overrides)
    return manager.build()
