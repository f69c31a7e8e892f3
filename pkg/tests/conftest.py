"""Shared fixtures. GHOSTSTAT_HOME points at a scratch directory before the package is imported."""

import os
import tempfile

os.environ["GHOSTSTAT_HOME"] = tempfile.mkdtemp(prefix="ghoststat-home-")

import numpy as np
import pytest

from ghoststat.core.forward import MeasurementRun, NoiseModel, StackPatternSource, simulate_run
from ghoststat.core.imaging import GrayImage, make_test_card
from ghoststat.core.stochastic import DistributionSpec, SeedRecipe
from ghoststat.core.worker import FrameWorker
from ghoststat.io.stacks import write_stack

LEVELS = (0.0, 0.4, 0.7, 1.0)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for key in ("GHOSTSTAT_OUT", "GHOSTSTAT_LOG_LEVEL", "GHOSTSTAT_THREADS"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def card() -> GrayImage:
    return make_test_card(8, 8, LEVELS)


@pytest.fixture
def uniform() -> DistributionSpec:
    return DistributionSpec.uniform(0.1, 1.0)


@pytest.fixture
def binary() -> DistributionSpec:
    return DistributionSpec.bernoulli(0.5, 0.0, 1.0)


@pytest.fixture
def recipe() -> SeedRecipe:
    return SeedRecipe(1234)


@pytest.fixture
def serial() -> FrameWorker:
    return FrameWorker(1)


@pytest.fixture
def small_run(card, uniform, recipe, serial) -> MeasurementRun:
    return simulate_run(card, uniform, recipe, 2000, 1.0, worker=serial)


@pytest.fixture
def stack_run(tmp_path):
    """Build a run from explicit frames and buckets through a GIPS stack."""
    counter = [0]

    def make(frames, buckets, image=None, gamma=1.0, noise=None) -> MeasurementRun:
        counter[0] += 1
        path = tmp_path / f"frames{counter[0]}.gips"
        write_stack(str(path), np.asarray(frames, dtype=np.float64))
        return MeasurementRun(
            gamma=gamma,
            buckets=np.asarray(buckets, dtype=np.float64),
            source=StackPatternSource(str(path)),
            image=image,
            noise=noise or NoiseModel.none(),
        )

    return make
