"""Correlated Gaussian draws for quasi Monte Carlo random-feature estimators.

Coordinate l of the M draws is jointly Gaussian with covariance
psi_l * 11^T + (1 - psi_l) * I, coordinates are independent, so every single
draw is still N(0, I_d) and the estimator stays unbiased.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List

import numpy as np
import scipy.linalg

from errors import DimensionMismatch, InvalidArgument, InvalidCorrelation
from kernelcore import checked_exp
from linalg import DrawScheme, FeatureDraws

if TYPE_CHECKING:
    from features import DEParams

logger = logging.getLogger(__name__)

BOUND_ATOL = 1e-12


@dataclass(frozen=True)
class QmcValidation:
    """Outcome of the covariance validity check"""

    valid: bool
    violations: List[int] = field(default_factory=list)  # offending coordinates
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # d x 2


def validate_qmc(psi, m: int) -> QmcValidation:
    """
    Check that psi * 11^T + (1 - psi) I is a covariance matrix for every coordinate.

    The block has eigenvalue 1 + (m - 1) psi_l once and 1 - psi_l with
    multiplicity m - 1, so validity is -1/(m - 1) <= psi_l <= 1.
    """
    if m < 2:
        raise InvalidArgument(f"QMC needs at least two draws, got m={m}")
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    eigenvalues = np.column_stack([1.0 + (m - 1) * psi, 1.0 - psi])
    bad = ~np.isfinite(psi) | np.any(eigenvalues < -BOUND_ATOL, axis=1)
    violations = [int(i) for i in np.flatnonzero(bad)]
    return QmcValidation(valid=not violations, violations=violations, eigenvalues=eigenvalues)


@dataclass(frozen=True)
class QmcCorrelation:
    psi_qmc: np.ndarray  # per-coordinate correlation between distinct draws
    m: int  # number of correlated draws

    def __post_init__(self):
        check = validate_qmc(self.psi_qmc, self.m)
        if not check.valid:
            raise InvalidCorrelation(
                f"psi_qmc out of [-1/(m-1), 1] at coordinates {check.violations} (m={self.m})"
            )

    @classmethod
    def uniform(cls, psi: float, d: int, m: int) -> "QmcCorrelation":
        return cls(psi_qmc=np.full(d, float(psi)), m=m)

    @property
    def dim(self) -> int:
        return self.psi_qmc.shape[0]


def antithetic_correlation(m: int, d: int) -> QmcCorrelation:
    """Most negative admissible correlation psi_l = -1/(m - 1) on every coordinate.

    A heuristic preset: for m = 2 it gives exact antithetic pairs.
    """
    if m < 2:
        raise InvalidArgument(f"antithetic draws need m >= 2, got m={m}")
    return QmcCorrelation.uniform(-1.0 / (m - 1), d, m)


def sample_qmc(corr: QmcCorrelation, d: int, rng: np.random.Generator) -> FeatureDraws:
    """
    M correlated draws in R^d.

    Each coordinate is realized in the eigenbasis of its covariance block: the
    Helmert basis has 1/sqrt(M) as its first vector, carrying eigenvalue
    1 + (M - 1) psi_l; the remaining vectors carry 1 - psi_l.
    """
    if corr.dim != d:
        raise DimensionMismatch(f"psi_qmc has {corr.dim} coordinates, expected {d}")
    m = corr.m
    basis = scipy.linalg.helmert(m, full=True).T  # columns orthonormal, first = 1/sqrt(m)

    lam = np.empty((m, d))
    lam[0] = 1.0 + (m - 1) * corr.psi_qmc
    lam[1:] = 1.0 - corr.psi_qmc
    lam = np.maximum(lam, 0.0)

    eps = rng.standard_normal((m, d))
    omegas = basis @ (np.sqrt(lam) * eps)
    return FeatureDraws(omegas=omegas, scheme=DrawScheme.QMC)


def log_qmc_cross_moment(p: "DEParams", psi, x, y) -> float:
    """log E[Z(w1) Z(w2)] for two draws with per-coordinate correlation psi.

    Z(w) = f1(w, x) f2(w, y). Integrating the pair per coordinate gives
    z_l^2 (1 + psi_l) / (1 - 4 a_l (1 + psi_l)) - 1/2 log((1 - 4 a_l)^2 - 16 a_l^2 psi_l^2)
    on top of 4 log D + 2 (x.C1 x + y.C2 y), with z = B1 x + B2 y.
    """
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = p.a_diag
    if psi.shape != a.shape or x.shape != a.shape or y.shape != a.shape:
        raise DimensionMismatch(
            f"psi {psi.shape}, x {x.shape}, y {y.shape} must match d={a.shape[0]}"
        )
    if np.any(np.abs(psi) > 1.0 + BOUND_ATOL):
        raise InvalidCorrelation("pairwise correlation must lie in [-1, 1]")

    z = p.b1 @ x + p.b2 @ y
    one_plus = 1.0 + psi
    pair_det = (1.0 - 4.0 * a) ** 2 - 16.0 * a**2 * psi**2
    per_coord = z**2 * one_plus / (1.0 - 4.0 * a * one_plus) - 0.5 * np.log(pair_det)
    quad = x @ p.c1 @ x + y @ p.c2 @ y
    return float(4.0 * p.log_det_d + 2.0 * quad + per_coord.sum())


def qmc_cross_moment(p: "DEParams", corr: QmcCorrelation, x, y) -> float:
    """E[Z(w1) Z(w2)] for two distinct draws of a correlated block"""
    return float(checked_exp(log_qmc_cross_moment(p, corr.psi_qmc, x, y)))


def qmc_estimator_variance(p: "DEParams", corr: QmcCorrelation, x, y) -> float:
    """
    Variance of the M-draw mean (1/M) sum_m Z(w_m).

    Args:
        p: DE parameters of the positive mechanism
        corr: correlation block used to draw the M samples
        x, y: the kernel arguments

    Returns:
        (1/M) Var Z + ((M - 1)/M) (E[Z(w1) Z(w2)] - K^2)
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k_sq = float(checked_exp(2.0 * (x @ y)))
    # perfectly correlated pair is the same draw twice
    second = float(checked_exp(log_qmc_cross_moment(p, np.ones_like(corr.psi_qmc), x, y)))
    cross = qmc_cross_moment(p, corr, x, y)
    m = corr.m
    return (second - k_sq) / m + (m - 1) / m * (cross - k_sq)
