"""
Pytest configuration and shared fixtures

Provides seeded streams, small point sets and configuration for all tests
"""

import os
import sys
from unittest.mock import MagicMock

import numpy as np
import pytest

# Add parent directory to path so tests can import backend modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from config import Config
from kernelcore import PointSet
from models import ExperimentResult, FitDump, GEParamsModel, ResultRecord


# ============================================================================
# Configuration Fixtures
# ============================================================================


@pytest.fixture
def test_config():
    """Create a small, fast configuration"""
    return Config(
        SEED=7,
        THREADS=1,
        LOG_LEVEL="WARNING",
        VARIANCE_SET_PAIRS=2,
        VARIANCE_L=16,
        VARIANCE_MC_SAMPLES=2048,
        SIGMA_GRID=(0.1, 1.0, 3),
        M_GRID=(16, 64),
        CLASSIFY_SEEDS=2,
        ADERF_RIDGE=False,
        OUTPUT_DIR="./results-test",
    )


# ============================================================================
# Random Stream Fixtures
# ============================================================================


@pytest.fixture
def rng():
    """Fresh seeded stream per test"""
    return np.random.Generator(np.random.Philox(12345))


# ============================================================================
# Test Data Fixtures
# ============================================================================


@pytest.fixture
def isotropic_set():
    """Four points (+-sqrt 2, 0), (0, +-sqrt 2): M1 = I, mean 0, avg |x|^2 = 2"""
    r = np.sqrt(2.0)
    return PointSet.of([[r, 0.0], [-r, 0.0], [0.0, r], [0.0, -r]])


@pytest.fixture
def small_sets(rng):
    """Two anisotropic, shifted 4-d sets with nonsingular moments"""
    scales = np.array([0.2, 0.35, 0.5, 0.25])
    xs = PointSet(points=rng.standard_normal((12, 4)) * scales)
    ys = PointSet(points=rng.standard_normal((10, 4)) * scales[::-1] + 0.1)
    return xs, ys


@pytest.fixture
def write_csv(tmp_path):
    """Write text into a CSV file under tmp_path and return its path"""

    def write(text: str, name: str = "data.csv") -> str:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return write


# ============================================================================
# Mock Fixtures
# ============================================================================


@pytest.fixture
def sample_fit_dump():
    """A GERF dump with A = 0 in d = 2"""
    return FitDump(
        mechanism="gerf",
        family="ge",
        ge=GEParamsModel(a=0.0, b=1.0, c=-0.5, log_d_coeff=0.0, d_dim=2),
    )


@pytest.fixture
def sample_result():
    """A one-record variance result"""
    return ExperimentResult(
        command="variance-compare",
        config={"mechs": ["gerf"]},
        records=[
            ResultRecord(
                mechanism="gerf",
                M=1,
                sigma=0.5,
                metric="mean_log_rel_var",
                value=-1.25,
                seed=0,
                L=16,
            )
        ],
    )


@pytest.fixture
def mock_runner(sample_fit_dump, sample_result):
    """Create a mock experiment runner"""
    mock = MagicMock()
    mock.registry.get_definitions.return_value = [
        {"name": "gerf", "description": "GE features", "fitted": True},
        {"name": "pos", "description": "Positive features", "fitted": False},
    ]
    mock.fit_dump.return_value = ExperimentResult(
        command="fit-dump", parameters=sample_fit_dump
    )
    mock.variance_compare.return_value = sample_result
    return mock
