"""Closed-form variance-optimal parameters for the exponential feature families.

Every solver minimizes the shifted log-variance objective, the mean over
data pairs of log E[(f1 f2)^2]. All of them reduce to the scalar problem

    min_A  f(A) = log(1 - 4A) - 1/2 log(1 - 8A) + phi / (1 - 8A),   8A < 1

for some data-dependent phi >= 0, which has a closed-form minimizer.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from errors import (
    DegenerateSigma,
    InvalidArgument,
    NegativePhi,
    SingularMoments,
    SingularTransform,
)
from features import DEParams, GEParams, SADEParams
from kernelcore import MomentStats
from linalg import svd, sym_eig, sym_power

logger = logging.getLogger(__name__)

PHI_CLAMP = 1e-10  # phi in [-PHI_CLAMP, 0) is roundoff and clamps to 0
SINGULAR_RTOL = 1e-10  # eigenvalues below rtol * trace / d count as singular
SIGMA_RTOL = 1e-12
TRANSFORM_RTOL = 1e-12


@dataclass(frozen=True)
class FitReport:
    """What a solver saw and achieved"""

    family: str
    phi: float
    objective_value: float  # closed-form shifted log-variance at the optimum
    sigma_diag: Optional[np.ndarray] = None  # ADERF singular values
    lam3: Optional[np.ndarray] = None  # SDERF spectrum, non-ascending
    psi: Optional[np.ndarray] = None  # SADERF scaling
    ridge: bool = False


@dataclass(frozen=True)
class ArfTransform:
    """Input transform x -> A x, y -> A^-T y that keeps x.y fixed"""

    a_mat: np.ndarray

    def __post_init__(self):
        if self.a_mat.ndim != 2 or self.a_mat.shape[0] != self.a_mat.shape[1]:
            raise InvalidArgument(f"ARF matrix must be square, got {self.a_mat.shape}")
        if not np.all(np.isfinite(self.a_mat)):
            raise SingularTransform("ARF matrix has non-finite entries")
        sigma = svd(self.a_mat).sigma
        if sigma[-1] <= TRANSFORM_RTOL * sigma[0]:
            raise SingularTransform(
                f"ARF matrix is singular: singular values {sigma[0]:.3e} .. {sigma[-1]:.3e}"
            )

    @property
    def inverse_transpose(self) -> np.ndarray:
        return scipy.linalg.inv(self.a_mat).T


# ============================================================================
# Scalar problem
# ============================================================================


def scalar_objective(a: float, phi: float) -> float:
    """f(A) = log(1 - 4A) - 1/2 log(1 - 8A) + phi / (1 - 8A)"""
    if not 1.0 - 8.0 * a > 0.0:
        raise InvalidArgument(f"A={a} violates 8A < 1")
    return float(np.log1p(-4.0 * a) - 0.5 * np.log1p(-8.0 * a) + phi / (1.0 - 8.0 * a))


def solve_scalar_a(phi: float) -> float:
    """Minimizer A* = (1 - 2 phi - sqrt((2 phi + 1)^2 + 8 phi)) / 16 of f"""
    if not np.isfinite(phi) or phi < 0.0:
        raise InvalidArgument(f"phi must be finite and non-negative, got {phi}")
    return float((1.0 - 2.0 * phi - np.sqrt((2.0 * phi + 1.0) ** 2 + 8.0 * phi)) / 16.0)


def _clamp_phi(phi: float, family: str) -> float:
    if phi < -PHI_CLAMP or not np.isfinite(phi):
        raise NegativePhi(
            f"{family}: phi={phi:.6g} is negative; moment statistics are inconsistent"
        )
    return max(phi, 0.0)


# ============================================================================
# Moment statistics under input transforms
# ============================================================================


def transform_stats(stats: MomentStats, psi) -> MomentStats:
    """Statistics of (Psi x, Psi^-1 y) for a positive diagonal Psi"""
    psi = np.asarray(psi, dtype=float)
    m1 = psi[:, None] * stats.m1 * psi[None, :]
    m2 = stats.m2 / psi[:, None] / psi[None, :]
    return MomentStats(
        m1=m1,
        m2=m2,
        mu3=stats.mu3,
        mu4=psi * stats.mu4,
        mu5=stats.mu5 / psi,
        sx=float(np.trace(m1)),
        sy=float(np.trace(m2)),
        diag_x=psi**2 * stats.diag_x,
        diag_y=stats.diag_y / psi**2,
        n_x=stats.n_x,
        n_y=stats.n_y,
    )


def transform_stats_linear(stats: MomentStats, a_mat) -> MomentStats:
    """Statistics of (A x, A^-T y) for an invertible A"""
    a_mat = np.asarray(a_mat, dtype=float)
    a_inv_t = scipy.linalg.inv(a_mat).T
    m1 = a_mat @ stats.m1 @ a_mat.T
    m2 = a_inv_t @ stats.m2 @ a_inv_t.T
    m1 = 0.5 * (m1 + m1.T)
    m2 = 0.5 * (m2 + m2.T)
    return MomentStats(
        m1=m1,
        m2=m2,
        mu3=stats.mu3,
        mu4=a_mat @ stats.mu4,
        mu5=a_inv_t @ stats.mu5,
        sx=float(np.trace(m1)),
        sy=float(np.trace(m2)),
        diag_x=stats.n_x * np.diag(m1).copy(),
        diag_y=stats.n_y * np.diag(m2).copy(),
        n_x=stats.n_x,
        n_y=stats.n_y,
    )


# ============================================================================
# Solvers
# ============================================================================


def fit_gerf(stats: MomentStats, d: Optional[int] = None) -> Tuple[GEParams, FitReport]:
    """
    Optimal scalar GE parameters.

    phi is the average |x + y|^2 over pairs divided by d, which is what the
    homogeneity heuristic plugs into the GE variance.
    """
    d = stats.dim if d is None else d
    if d != stats.dim:
        raise InvalidArgument(f"statistics have d={stats.dim}, requested d={d}")
    phi = _clamp_phi(stats.avg_pair_sq_norm / d, "gerf")
    a = solve_scalar_a(phi)
    objective = d * scalar_objective(a, phi) + 2.0 * d * stats.mu3
    logger.debug("gerf fit: phi=%.6g a=%.6g objective=%.6g", phi, a, objective)
    return GEParams.from_a(a, d), FitReport(family="gerf", phi=phi, objective_value=objective)


def fit_saderf(stats: MomentStats) -> Tuple[SADEParams, FitReport]:
    """
    Diagonal scaling psi_l = (mean y_l^2 / mean x_l^2)^(1/4), then GE on the scaled data.

    With equally sized sets this is (sum y_l^2 / sum x_l^2)^(1/4).
    """
    degenerate = (stats.diag_x <= 0.0) | (stats.diag_y <= 0.0)
    if np.any(degenerate):
        logger.warning(
            "saderf: coordinates %s carry no energy on one side, using psi=1 there",
            np.flatnonzero(degenerate).tolist(),
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (stats.diag_y / stats.n_y) / (stats.diag_x / stats.n_x)
        psi = np.where(degenerate, 1.0, ratio**0.25)

    ge, report = fit_gerf(transform_stats(stats, psi))
    logger.debug("saderf fit: psi=%s objective=%.6g", psi, report.objective_value)
    return SADEParams(psi=psi, ge=ge), FitReport(
        family="saderf", phi=report.phi, objective_value=report.objective_value, psi=psi
    )


def _check_nonsingular(m: np.ndarray, name: str) -> None:
    d = m.shape[0]
    lam = sym_eig(m, psd=True).lam
    floor = SINGULAR_RTOL * np.trace(m) / d
    if lam[-1] <= floor:
        raise SingularMoments(
            f"{name} is singular: smallest eigenvalue {lam[-1]:.3e} <= {floor:.3e}"
        )


def _ridge(m: np.ndarray, eps: float) -> np.ndarray:
    d = m.shape[0]
    return m + eps * np.trace(m) / d * np.eye(d)


def fit_aderf(
    stats: MomentStats, ridge: bool = False, ridge_eps: float = 1e-8
) -> Tuple[DEParams, FitReport]:
    """
    Optimal asymmetric dense parameters.

    Args:
        stats: moment statistics with nonsingular m1 and m2
        ridge: add ridge_eps * (trace / d) * I to singular moment matrices
            instead of failing

    Returns:
        DE parameters and a report carrying the singular values of
        Lambda1^1/2 Q1^T Q2 Lambda2^1/2
    """
    d = stats.dim
    m1, m2 = stats.m1, stats.m2
    if ridge:
        logger.warning("aderf: adding a %.1e relative ridge to the moment matrices", ridge_eps)
        m1, m2 = _ridge(m1, ridge_eps), _ridge(m2, ridge_eps)
    _check_nonsingular(m1, "M1")
    _check_nonsingular(m2, "M2")

    e1 = sym_eig(m1, psd=True)
    e2 = sym_eig(m2, psd=True)
    root1 = np.sqrt(e1.lam)
    root2 = np.sqrt(e2.lam)
    core = svd(root1[:, None] * (e1.q.T @ e2.q) * root2[None, :])
    sigma = core.sigma
    if sigma[-1] < SIGMA_RTOL * sigma[0]:
        raise DegenerateSigma(f"singular values collapse: {sigma[0]:.3e} .. {sigma[-1]:.3e}")

    phi = _clamp_phi(2.0 * sigma.sum() / d + 2.0 * stats.mu3, "aderf")
    a = solve_scalar_a(phi)
    scale = np.sqrt(1.0 - 4.0 * a)
    half = np.sqrt(sigma)
    b1 = scale * (half[:, None] * core.u.T) @ ((1.0 / root1)[:, None] * e1.q.T)
    b2 = scale * ((1.0 / half)[:, None] * core.u.T) @ (root1[:, None] * e1.q.T)

    params = DEParams.from_matrices(np.full(d, a), b1, b2)
    params.check_constraints()
    objective = d * scalar_objective(a, phi) + 2.0 * d * stats.mu3
    logger.debug("aderf fit: phi=%.6g a=%.6g objective=%.6g", phi, a, objective)
    return params, FitReport(
        family="aderf", phi=phi, objective_value=objective, sigma_diag=sigma, ridge=ridge
    )


def fit_sderf(stats: MomentStats) -> Tuple[DEParams, FitReport]:
    """
    Optimal symmetric dense parameters (B1 = B2, C = -1/2 I).

    The eigenvalues of N = M1 + mu4 mu5^T + mu5 mu4^T + M2 split the problem
    into d independent scalar problems.
    """
    n = stats.m1 + np.outer(stats.mu4, stats.mu5) + np.outer(stats.mu5, stats.mu4) + stats.m2
    eig = sym_eig(0.5 * (n + n.T), psd=True)
    lam3 = eig.lam
    a_diag = np.array([solve_scalar_a(float(v)) for v in lam3])
    b = np.sqrt(1.0 - 4.0 * a_diag)[:, None] * eig.q.T

    params = DEParams.from_matrices(a_diag, b, b)
    params.check_constraints()
    per_coord = np.log1p(-4.0 * a_diag) - 0.5 * np.log1p(-8.0 * a_diag)
    per_coord += (1.0 + 1.0 / (1.0 - 8.0 * a_diag)) * lam3
    objective = float(per_coord.sum() - stats.sx - stats.sy)
    logger.debug("sderf fit: lam3=%s objective=%.6g", lam3, objective)
    return params, FitReport(
        family="sderf", phi=float(lam3.mean()), objective_value=objective, lam3=lam3
    )


def fit_arf_first_order(
    m1, m2, canonical: bool = True, diagonal: bool = False
) -> ArfTransform:
    """
    First-order relaxation of the asymmetric-feature transform.

    With symmetric roots Q_X = M1^1/2, Q_Y = M2^1/2 and Q_X Q_Y^T = U D V^T the
    relaxed optimum is D^1/2 U^T Q_X^-T. Any orthogonal left factor leaves the
    objective unchanged. By default (``canonical=True``) the result is
    U D^1/2 U^T Q_X^-T, which solves the stationarity equation exactly on
    commuting inputs; ``canonical=False`` returns the literal D^1/2 U^T Q_X^-T.

    ``diagonal`` returns the per-coordinate optimum a_l = (M2_ll / M1_ll)^1/4.
    """
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    if diagonal:
        d1, d2 = np.diag(m1), np.diag(m2)
        if np.any(d1 <= 0.0) or np.any(d2 <= 0.0):
            raise SingularMoments("diagonal ARF needs positive energy on every coordinate")
        return ArfTransform(a_mat=np.diag((d2 / d1) ** 0.25))

    _check_nonsingular(m1, "M1")
    _check_nonsingular(m2, "M2")
    q_x = sym_power(m1, 0.5)
    q_y = sym_power(m2, 0.5)
    q_x_inv = sym_power(m1, -0.5)  # symmetric, so also Q_X^-T

    dec = svd(q_x @ q_y.T)
    left = np.sqrt(dec.sigma)[:, None] * dec.u.T
    if canonical:
        left = dec.u @ left
    return ArfTransform(a_mat=left @ q_x_inv)


def arf_residual(t: ArfTransform, m1, m2) -> float:
    """Relative residual of A M1 A = (A^-2)^T M2"""
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    try:
        a_inv = scipy.linalg.inv(t.a_mat)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularTransform(f"ARF matrix is not invertible: {e}") from e
    lhs = t.a_mat @ m1 @ t.a_mat
    rhs = (a_inv @ a_inv).T @ m2
    return float(np.linalg.norm(lhs - rhs) / (1.0 + np.linalg.norm(m2)))


def fit_arf(
    stats: MomentStats, canonical: bool = True, diagonal: bool = False
) -> Tuple[DEParams, FitReport]:
    """GE features on ARF-transformed inputs, expressed as DE parameters"""
    t = fit_arf_first_order(stats.m1, stats.m2, canonical=canonical, diagonal=diagonal)
    ge, report = fit_gerf(transform_stats_linear(stats, t.a_mat))
    params = DEParams.from_matrices(
        np.full(stats.dim, ge.a), ge.b * t.a_mat, ge.b * t.inverse_transpose
    )
    params.check_constraints()
    return params, FitReport(family="arf", phi=report.phi, objective_value=report.objective_value)
