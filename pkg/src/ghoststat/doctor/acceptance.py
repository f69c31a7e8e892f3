"""
ghoststat Acceptance Suite
Statistical self-checks behind ``ghoststat verify``: each check simulates,
reconstructs and compares against the theory module, and reports
pass / warn / fail the way a health check would.
"""

import os
import math
import logging
import tempfile
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ghoststat.core.analysis import (
    LinearityReport,
    RegionStats,
    linearity_fit,
    mean_band_check,
    region_statistics,
)
from ghoststat.core.errors import DegenerateRunError
from ghoststat.core.estimators import (
    Estimator,
    accumulate,
    centered_delta_g2,
    identity_deviation,
    reconstruct_all,
)
from ghoststat.core.forward import MeasurementRun, NoiseModel, simulate_run
from ghoststat.core.imaging import GrayImage, build_region_index, make_test_card
from ghoststat.core.stochastic import DistributionSpec, SeedRecipe, TransformSpec
from ghoststat.core.theory import (
    TheoryPrediction,
    compute_moments,
    empirical_moments,
    predict,
    theoretical_mean,
)
from ghoststat.core.worker import FrameWorker
from ghoststat.io.runs import BUCKETS_FILE, save_run

logger = logging.getLogger("ghoststat.acceptance")

SIM_LEVELS = (0.0, 0.4, 0.7, 1.0)
SIM_FRACTIONS = (0.81975, 0.05265, 0.08055, 0.04705)
UNIFORM = DistributionSpec.uniform(0.1, 1.0)
BINARY = DistributionSpec.bernoulli(0.5, 0.0, 1.0)
EXP_NOISE = NoiseModel.gaussian(2.0985e6, 1.2260e10)
EXP_GAMMA = 1.0e4
EXP_T = 11940
SWEEP = tuple(TransformSpec.parse(t) for t in ("identity", "power:3", "exp", "log"))
BINARY_SWEEP = SWEEP[:3]
SHIPPED_PAIRS = [(UNIFORM, t) for t in SWEEP] + [(BINARY, t) for t in BINARY_SWEEP]
IDENTITY = SWEEP[0]

IDENTITY_TOLERANCE = 1e-9
DETERMINISM_TOLERANCE = 1e-9
FLAT_DGI_FLOOR = 1e-9


@dataclass
class CheckResult:
    """Result of a single acceptance criterion."""
    name: str
    category: str
    status: str  # 'pass', 'warn', 'fail'
    message: str
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "category": self.category,
            "status": self.status,
            "message": self.message,
            "details": self.details,
        }

    @property
    def icon(self) -> str:
        return {"pass": "✓", "warn": "⚠", "fail": "✗"}.get(self.status, "?")


@dataclass(frozen=True)
class AcceptanceScale:
    name: str
    width: int
    height: int
    T: int
    gaussian_reps: int
    variance_size: int
    variance_T: int
    variance_reps: int
    moment_samples: int
    r2_delta: float
    r2_ratio: float
    # multiples of the fit standard error added to the fixed bounds; 0 keeps them exact
    se_widening: float = 0.0


QUICK = AcceptanceScale("quick", 32, 32, 10_000, 5, 16, 2_000, 100, 1_000_000, 0.99, 0.98, se_widening=4.0)
FULL = AcceptanceScale("full", 64, 64, 100_000, 20, 16, 10_000, 500, 10_000_000, 0.999, 0.995)


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


class AcceptanceSuite:
    """Run the acceptance matrix at quick or full scale."""

    def __init__(
        self,
        quick: bool = False,
        seed: int = 20240601,
        threads: int = 0,
        inject_c1_sign_error: bool = False,
        on_progress: Optional[Callable[[str], None]] = None,
    ):
        self.scale = QUICK if quick else FULL
        self.seed = int(seed)
        self.threads = threads
        self.inject_c1_sign_error = inject_c1_sign_error
        self._worker = FrameWorker(threads)
        self._on_progress = on_progress
        self._results: List[CheckResult] = []
        self._sim: Optional[Tuple[MeasurementRun, Any]] = None
        self._exp: Optional[Tuple[MeasurementRun, Any]] = None

    # ── helpers ──

    def _progress(self, message: str) -> None:
        logger.debug(message)
        if self._on_progress:
            self._on_progress(message)

    def _card(self, width: Optional[int] = None, height: Optional[int] = None) -> GrayImage:
        return make_test_card(width or self.scale.width, height or self.scale.height, SIM_LEVELS, "stripes", SIM_FRACTIONS)

    def _theory(
        self,
        dist: DistributionSpec,
        transform: TransformSpec,
        image: GrayImage,
        gamma: float,
        T: int,
        noise: Optional[NoiseModel] = None,
    ) -> TheoryPrediction:
        prediction = predict(compute_moments(dist, transform), image, gamma, T, noise, transform=transform)
        if self.inject_c1_sign_error:
            prediction = _with_c1_sign_error(prediction)
        return prediction

    def _simulate(self, image: GrayImage, dist: DistributionSpec, T: int, seed: int,
                  gamma: float = 1.0, noise: Optional[NoiseModel] = None) -> MeasurementRun:
        return simulate_run(image, dist, SeedRecipe(seed), T, gamma, noise, worker=self._worker)

    def _sim_setup(self):
        """The shared four-level uniform run and its one-pass accumulator."""
        if self._sim is None:
            self._progress(f"Simulating four-level card ({self.scale.width}x{self.scale.height}, T={self.scale.T})")
            run = self._simulate(self._card(), UNIFORM, self.scale.T, self.seed)
            self._progress("Accumulating the transform sweep")
            self._sim = (run, accumulate(run, SWEEP, self._worker))
        return self._sim

    def _exp_setup(self):
        if self._exp is None:
            self._progress(f"Simulating noisy binary card (T={EXP_T})")
            image = make_test_card(64, 64, (0.0, 1.0), "nested-rects")
            run = self._simulate(image, BINARY, EXP_T, self.seed + 1, EXP_GAMMA, EXP_NOISE)
            self._exp = (run, accumulate(run, BINARY_SWEEP, self._worker))
        return self._exp

    def _region_stats(self, run: MeasurementRun, acc, estimator: Estimator, transform: TransformSpec,
                      dist: DistributionSpec) -> Tuple[List[RegionStats], TheoryPrediction]:
        recon = acc.reconstruct(estimator, transform)
        theory = self._theory(dist, transform, run.image, run.gamma, run.T, run.noise)
        return region_statistics(recon, build_region_index(run.image), theory), theory

    def _linearity(
        self,
        stats: Sequence[RegionStats],
        estimator: Estimator,
        theory: TheoryPrediction,
        rel_tol: float,
        r2_min: float,
        check_intercept: bool = False,
    ) -> Tuple[bool, LinearityReport, Dict[str, Any]]:
        report = linearity_fit(stats, estimator, theory)
        slope_tol = rel_tol
        if report.slope_se is not None and report.predicted_slope:
            slope_tol = max(rel_tol, self.scale.se_widening * report.slope_se / abs(report.predicted_slope))
        ok = report.r2 >= r2_min and report.slope_rel_error is not None and report.slope_rel_error <= slope_tol
        details = report.to_dict()
        details.update({"slope_tolerance": slope_tol, "r2_min": r2_min})
        if check_intercept:
            base = stats[0]
            bound = 2.0 * math.sqrt((base.sigma2 or base.variance or 0.0) / base.count)
            if report.intercept_se is not None:
                bound = max(bound, self.scale.se_widening * report.intercept_se)
            details["intercept_bound"] = bound
            ok = ok and report.intercept_error is not None and report.intercept_error <= bound
        return ok, report, details

    # ── criteria ──

    def _check_linear_mean(self) -> CheckResult:
        run, acc = self._sim_setup()
        stats, theory = self._region_stats(run, acc, Estimator.DELTA_G2, IDENTITY, UNIFORM)
        ok, report, details = self._linearity(stats, Estimator.DELTA_G2, theory, 0.02, self.scale.r2_delta, True)
        return CheckResult(
            "Linear mean (DeltaG2, F=I)", "1", _status(ok),
            f"R²={report.r2:.5f}, slope {report.slope:.5g} vs {report.predicted_slope:.5g} "
            f"({100 * report.slope_rel_error:.2f}%)",
            details,
        )

    def _check_transform_universality(self) -> CheckResult:
        run, acc = self._sim_setup()
        verdicts, details = [], {}
        for transform in SWEEP[1:]:
            stats, theory = self._region_stats(run, acc, Estimator.DELTA_G2, transform, UNIFORM)
            ok, report, d = self._linearity(stats, Estimator.DELTA_G2, theory, 0.02, self.scale.r2_delta)
            verdicts.append(ok)
            details[transform.label] = d
        failed = [t.label for t, ok in zip(SWEEP[1:], verdicts) if not ok]
        message = "power3, exp and log all linear" if not failed else f"failed for {', '.join(failed)}"
        return CheckResult("Transform universality", "2", _status(not failed), message, details)

    def _check_gaussian_shape(self) -> CheckResult:
        image = self._card()
        regions = build_region_index(image)
        theory = self._theory(UNIFORM, IDENTITY, image, 1.0, self.scale.T)
        passed = total = 0
        runs_ok = True
        per_run = []
        for rep in range(self.scale.gaussian_reps):
            self._progress(f"Gaussian shape: repetition {rep + 1}/{self.scale.gaussian_reps}")
            run = self._simulate(image, UNIFORM, self.scale.T, self.seed + 100 + rep)
            recon = accumulate(run, [IDENTITY], self._worker).reconstruct(Estimator.DELTA_G2, IDENTITY)
            stats = region_statistics(recon, regions, theory)
            verdicts = [s.ks_pass for s in stats if s.ks_pass is not None]
            run_passed = sum(verdicts)
            passed += run_passed
            total += len(verdicts)
            runs_ok = runs_ok and run_passed >= math.ceil(0.75 * len(verdicts))
            per_run.append([s.ks for s in stats])
        rate = passed / total if total else 0.0
        ok = runs_ok and rate >= 0.95
        return CheckResult(
            "Gaussian shape (KS)", "3", _status(ok),
            f"{passed}/{total} region tests below 1.36/√N ({100 * rate:.1f}%)",
            {"ks": per_run, "pass_rate": rate},
        )

    def _check_variance_formula(self) -> CheckResult:
        side = self.scale.variance_size
        image = make_test_card(side, side, (0.0, 1.0), "stripes")
        regions = build_region_index(image)
        T = self.scale.variance_T
        moments = compute_moments(UNIFORM, IDENTITY)
        reps = self.scale.variance_reps
        values = np.empty((reps, image.M))
        for rep in range(reps):
            if rep % 50 == 0:
                self._progress(f"Variance formula: repetition {rep + 1}/{reps}")
            run = self._simulate(image, UNIFORM, T, self.seed + 10_000 + rep)
            values[rep] = accumulate(run, [IDENTITY], self._worker).delta_g2(IDENTITY)
        pixel_var = np.var(values, axis=0, ddof=1)
        theory = self._theory(UNIFORM, IDENTITY, image, 1.0, T)
        details, ok = {}, True
        for i, level in enumerate(regions.levels):
            empirical = float(np.mean(regions.region_values(pixel_var, i)))
            predicted = theory.level_for(level).sigma2
            rel = abs(empirical - predicted) / predicted
            details[f"d={level:g}"] = {"empirical": empirical, "predicted": predicted, "rel_error": rel}
            ok = ok and rel <= 0.05
        worst = max(v["rel_error"] for v in details.values())
        return CheckResult(
            "Variance formula", "4", _status(ok),
            f"{reps} repetitions, worst region off by {100 * worst:.2f}%", details,
        )

    def _check_noise_extension(self) -> CheckResult:
        run, acc = self._exp_setup()
        stats, theory = self._region_stats(run, acc, Estimator.DELTA_G2, IDENTITY, BINARY)
        ok_line, report, details = self._linearity(stats, Estimator.DELTA_G2, theory, 0.02, self.scale.r2_delta, True)
        ks = [s.ks_pass for s in stats if s.ks_pass is not None]
        ok = ok_line and bool(ks) and all(ks)
        details["ks"] = [s.to_dict() for s in stats]
        return CheckResult(
            "Noise extension", "5", _status(ok),
            f"slope off by {100 * report.slope_rel_error:.2f}%, KS {sum(ks)}/{len(ks)} regions",
            details,
        )

    def _check_g2_dgi_means(self) -> CheckResult:
        run, acc = self._sim_setup()
        details, ok = {}, True
        for estimator in (Estimator.NORMALIZED_G2, Estimator.DGI):
            stats, theory = self._region_stats(run, acc, estimator, IDENTITY, UNIFORM)
            good, _, d = self._linearity(stats, estimator, theory, 0.03, self.scale.r2_ratio)
            details[estimator.value] = d
            ok = ok and good

        self._progress("DGI on a uniform object")
        flat = make_test_card(self.scale.width, self.scale.height, (0.7,))
        flat_run = self._simulate(flat, UNIFORM, self.scale.T, self.seed + 2)
        stats, flat_theory = self._region_stats(flat_run, accumulate(flat_run, [IDENTITY], self._worker),
                                                Estimator.DGI, IDENTITY, UNIFORM)
        bands = mean_band_check(stats)
        # a flat object leaves only rounding residue, far below any sampling band
        floor = FLAT_DGI_FLOOR * abs(flat_theory.constants.C1)
        details["uniform_object"] = [dict(b.to_dict(), floor=floor) for b in bands]
        ok = ok and bool(bands) and all(b.passed or abs(b.mean - b.mu) <= floor for b in bands)
        return CheckResult("g2 and DGI means", "6", _status(ok),
                           "g2 and DGI slopes and the flat-object band " + ("hold" if ok else "do not hold"), details)

    def _check_identity(self) -> CheckResult:
        deviations = {}
        for name, (run, acc) in (("sim", self._sim_setup()), ("exp", self._exp_setup())):
            transforms = acc.transforms
            centered = centered_delta_g2(run, transforms, first_pass=acc, worker=self._worker)
            for transform, c in zip(transforms, centered):
                deviations[f"{name}/{transform.label}"] = identity_deviation(acc.delta_g2(transform), c.values)
        worst = max(deviations.values())
        return CheckResult("Centered identity", "7", _status(worst <= IDENTITY_TOLERANCE),
                           f"max relative deviation {worst:.2e}", deviations)

    def _check_moment_oracle(self) -> CheckResult:
        recipe = SeedRecipe(self.seed)
        details, ok = {}, True
        for dist, transform in SHIPPED_PAIRS:
            exact = compute_moments(dist, transform).to_dict()
            means, errors = empirical_moments(dist, transform, self.scale.moment_samples, recipe)
            empirical = means.to_dict()
            worst = 0.0
            for name, se in errors.items():
                diff = abs(empirical[name] - exact[name])
                z = diff / se if se > 0 else (0.0 if diff <= 1e-12 * max(1.0, abs(exact[name])) else math.inf)
                worst = max(worst, z)
            details[f"{dist.describe()} F={transform.describe()}"] = {"worst_z": worst}
            ok = ok and worst <= 3.0
        worst_all = max(v["worst_z"] for v in details.values())
        return CheckResult("Moment oracle", "8", _status(ok),
                           f"{len(SHIPPED_PAIRS)} pairs, worst deviation {worst_all:.2f} standard errors", details)

    def _check_determinism(self) -> CheckResult:
        image = self._card()
        serial = FrameWorker(1)
        parallel = FrameWorker(max(2, self._worker.threads))
        recipe = SeedRecipe(self.seed + 3)
        run_a = simulate_run(image, UNIFORM, recipe, self.scale.T, 1.0, worker=serial)
        run_b = simulate_run(image, UNIFORM, recipe, self.scale.T, 1.0, worker=parallel)
        with tempfile.TemporaryDirectory(prefix="ghoststat-verify-") as tmp:
            paths = []
            for name, run in (("a", run_a), ("b", run_b)):
                save_run(run, os.path.join(tmp, name))
                paths.append(os.path.join(tmp, name, BUCKETS_FILE))
            with open(paths[0], "rb") as fa, open(paths[1], "rb") as fb:
                identical = fa.read() == fb.read()

        estimators = list(Estimator)
        recon_a = reconstruct_all(run_a, estimators, SWEEP, worker=serial)
        recon_b = reconstruct_all(run_b, estimators, SWEEP, worker=parallel)
        worst = max(identity_deviation(a.values, b.values) for a, b in zip(recon_a, recon_b))
        ok = identical and worst <= DETERMINISM_TOLERANCE
        return CheckResult(
            "Determinism", "9", _status(ok),
            f"buckets {'byte-identical' if identical else 'DIFFER'}, reconstructions within {worst:.1e} "
            f"(1 vs {parallel.threads} threads)",
            {"buckets_identical": identical, "max_deviation": worst},
        )

    # ── driver ──

    def run_all(self) -> List[CheckResult]:
        self._results = []
        checks = [
            self._check_linear_mean,
            self._check_transform_universality,
            self._check_gaussian_shape,
            self._check_variance_formula,
            self._check_noise_extension,
            self._check_g2_dgi_means,
            self._check_identity,
            self._check_moment_oracle,
            self._check_determinism,
        ]
        for check in checks:
            try:
                self._results.append(check())
            except Exception as e:
                logger.exception("Acceptance check %s raised", check.__name__)
                self._results.append(CheckResult(
                    name=check.__name__.replace("_check_", "").replace("_", " "),
                    category="error",
                    status="fail",
                    message=f"Check failed with error: {e}",
                ))
        return self._results

    def get_summary(self) -> Dict[str, Any]:
        passed = sum(1 for r in self._results if r.status == "pass")
        warned = sum(1 for r in self._results if r.status == "warn")
        failed = sum(1 for r in self._results if r.status == "fail")
        return {
            "scale": self.scale.name,
            "seed": self.seed,
            "total": len(self._results),
            "passed": passed,
            "warnings": warned,
            "failed": failed,
            "healthy": failed == 0,
            "worker": self._worker.get_stats(),
            "results": [r.to_dict() for r in self._results],
        }


def _with_c1_sign_error(prediction: TheoryPrediction) -> TheoryPrediction:
    """Sensitivity hook: the same prediction with C1 negated in every mean."""
    c = prediction.constants
    constants = replace(c, C1=-c.C1, c3=-c.c3 if c.c3 is not None else None)
    levels = []
    for level in prediction.levels:
        mu = {}
        for estimator in Estimator:
            try:
                mu[estimator.value] = theoretical_mean(estimator, level.d, constants, prediction.T)
            except DegenerateRunError:
                mu[estimator.value] = None
        levels.append(replace(level, mu=mu))
    return replace(prediction, constants=constants, levels=levels)
