import os
from dataclasses import dataclass
from typing import Tuple

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


@dataclass
class Config:
    """Run-level settings for the random-feature toolkit"""

    # Reproducibility and parallelism
    SEED: int = int(os.getenv("FAVOR_SEED", "0"))
    THREADS: int = int(os.getenv("FAVOR_THREADS", "1"))
    LOG_LEVEL: str = os.getenv("FAVOR_LOG_LEVEL", "INFO")

    # Feature sampling
    DEFAULT_M: int = 64  # Random features per estimator
    MC_CHUNK: int = 65536  # Draws per chunk in Monte Carlo loops

    # Variance comparison
    VARIANCE_SET_PAIRS: int = 5  # Set-pairs sampled per (mechanism, sigma)
    VARIANCE_L: int = 64  # Points per sampled set
    VARIANCE_MC_SAMPLES: int = 4096  # Draws for the empirical TrigRF variance

    # Kernel classification
    SIGMA_GRID: Tuple[float, float, int] = (1e-2, 1e2, 10)  # lo, hi, count (log)
    M_GRID: Tuple[int, ...] = (16, 32, 64, 128)
    CLASSIFY_SEEDS: int = 20

    # Solvers
    ADERF_RIDGE: bool = _env_flag("FAVOR_ADERF_RIDGE")
    RIDGE_EPS: float = 1e-8

    # Output location for result files
    OUTPUT_DIR: str = os.getenv("FAVOR_OUTPUT_DIR", "./results")


config = Config()
