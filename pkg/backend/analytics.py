"""Analytic second moments of the exponential feature families, the objectives
built on them, and Monte Carlo estimates used to validate them.

All analytic quantities are assembled as log second moments first; variances
are only exponentiated at the end.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats as sps

from config import config
from errors import InvalidArgument, NumericOverflow
from features import DEParams, Family, Mechanism, draw_features, feature_values
from kernelcore import PointSet, checked_exp, log_kernel_matrix
from linalg import DrawScheme

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = -1e-12  # relative negative variance tolerated as roundoff
EXPM1_SWITCH = 30.0


@dataclass(frozen=True)
class VarianceReport:
    kernel_value: float
    analytic_var: Optional[float] = None  # None for TrigRFs
    empirical_var: Optional[float] = None
    empirical_se: Optional[float] = None
    n_samples: Optional[int] = None


def _vectors(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise InvalidArgument(f"x {x.shape} and y {y.shape} must be vectors of equal length")
    return x, y


def _variance_from_logs(log_sm, log_k):
    """K^2 expm1(log_sm - 2 log K) with roundoff negatives clamped to 0"""
    checked_exp(log_sm)
    k_sq = checked_exp(2.0 * np.asarray(log_k))
    var = k_sq * np.expm1(np.asarray(log_sm) - 2.0 * np.asarray(log_k))
    if np.any(var < VARIANCE_FLOOR * np.maximum(k_sq, 1.0)):
        logger.warning("negative variance %.3e beyond roundoff", float(np.min(var)))
    return np.maximum(var, 0.0)


def log_expm1(delta):
    """log(exp(delta) - 1) for delta >= 0, stable at both ends"""
    delta = np.asarray(delta, dtype=float)
    big = delta > EXPM1_SWITCH
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.log(np.maximum(np.expm1(np.where(big, 0.0, delta)), np.finfo(float).tiny))
        large = delta + np.log1p(-np.exp(-np.where(big, delta, EXPM1_SWITCH)))
    return np.where(big, large, small)


# ============================================================================
# Closed forms
# ============================================================================


def ge_log_second_moment(a: float, x, y) -> float:
    x, y = _vectors(x, y)
    if not 1.0 - 8.0 * a > 0.0:
        raise InvalidArgument(f"a={a} violates 1 - 8a > 0")
    d = x.shape[0]
    s = x + y
    return float(
        d * (np.log1p(-4.0 * a) - 0.5 * np.log1p(-8.0 * a))
        + (2.0 - 8.0 * a) / (1.0 - 8.0 * a) * (s @ s)
        - x @ x
        - y @ y
    )


def ge_variance(a: float, x, y) -> float:
    """Variance of f1 f2 for GE features with parameter a"""
    x, y = _vectors(x, y)
    return float(_variance_from_logs(ge_log_second_moment(a, x, y), x @ y))


def de_log_second_moment(p: DEParams, x, y) -> float:
    """log E[(f1(w, x) f2(w, y))^2] for DE parameters"""
    x, y = _vectors(x, y)
    if x.shape[0] != p.dim:
        raise InvalidArgument(f"points have d={x.shape[0]}, parameters d={p.dim}")
    z = p.b1 @ x + p.b2 @ y
    g = 1.0 / (1.0 - 8.0 * p.a_diag)
    return float(
        4.0 * p.log_det_d
        - 0.5 * np.log1p(-8.0 * p.a_diag).sum()
        + 2.0 * (x @ p.c1 @ x + y @ p.c2 @ y)
        + 2.0 * (g * z) @ z
    )


def de_variance(p: DEParams, x, y) -> float:
    x, y = _vectors(x, y)
    return float(_variance_from_logs(de_log_second_moment(p, x, y), x @ y))


# ============================================================================
# Objectives over point sets
# ============================================================================


def log_second_moment_matrix(mech: Mechanism, xs: PointSet, ys: PointSet) -> np.ndarray:
    """Lx x Ly matrix of log E[(f1 f2)^2] for every pair"""
    p = mech.as_de(xs.dim)
    if ys.dim != xs.dim:
        raise InvalidArgument(f"point sets disagree on dimension: {xs.dim} vs {ys.dim}")
    g = 1.0 / (1.0 - 8.0 * p.a_diag)
    zx = xs.points @ p.b1.T
    zy = ys.points @ p.b2.T
    quad_x = np.einsum("ij,jk,ik->i", xs.points, p.c1, xs.points) + (zx**2) @ g
    quad_y = np.einsum("ij,jk,ik->i", ys.points, p.c2, ys.points) + (zy**2) @ g
    const = 4.0 * p.log_det_d - 0.5 * np.log1p(-8.0 * p.a_diag).sum()
    return const + 2.0 * quad_x[:, None] + 2.0 * quad_y[None, :] + 4.0 * (zx * g) @ zy.T


def log_relative_variance(mech: Mechanism, xs: PointSet, ys: PointSet) -> np.ndarray:
    """log(Var / K^2) per pair, floored at log(tiny) where the variance vanishes"""
    delta = log_second_moment_matrix(mech, xs, ys) - 2.0 * log_kernel_matrix(xs, ys)
    return log_expm1(np.maximum(delta, 0.0))


def shifted_logvar_objective(mech: Mechanism, xs: PointSet, ys: PointSet) -> float:
    """Mean over all pairs of log(Var + K^2); TrigRFs raise TrigUnsupported"""
    return float(log_second_moment_matrix(mech, xs, ys).mean())


def mse_objective(mech: Mechanism, xs: PointSet, ys: PointSet) -> float:
    """Sum over all pairs of Var(f1 f2); overflows for large exponents"""
    log_sm = log_second_moment_matrix(mech, xs, ys)
    return float(_variance_from_logs(log_sm, log_kernel_matrix(xs, ys)).sum())


# ============================================================================
# Monte Carlo
# ============================================================================


def sample_products(
    mech: Mechanism, x, y, n: int, rng: np.random.Generator, chunk: Optional[int] = None
) -> np.ndarray:
    """n draws of Z = f1(w, x) f2(w, y), generated chunk by chunk from one stream"""
    chunk = max(1, int(chunk or config.MC_CHUNK))
    x, y = _vectors(x, y)
    xs, ys = PointSet.of(x), PointSet.of(y)
    values = []
    remaining = n
    while remaining > 0:
        size = min(chunk, remaining)
        draws = draw_features(mech, size, x.shape[0], rng)
        values.append(feature_values(mech, draws, xs, 1)[0] * feature_values(mech, draws, ys, 2)[0])
        remaining -= size
    return np.concatenate(values)


def empirical_variance(
    mech: Mechanism, x, y, n: int, rng: np.random.Generator, chunk: Optional[int] = None
) -> VarianceReport:
    """
    Sample variance of Z = f1 f2 with its standard error.

    The standard error of the variance uses the fourth central moment,
    se = sqrt((m4 - m2^2) / n). The analytic value is filled in for every
    positive family.
    """
    if n < 2:
        raise InvalidArgument(f"empirical variance needs n >= 2, got {n}")
    if mech.scheme is DrawScheme.QMC:
        logger.warning("QMC draws are correlated; the standard error assumes independence")
    x, y = _vectors(x, y)
    z = sample_products(mech, x, y, n, rng, chunk)
    if not np.all(np.isfinite(z)):
        raise NumericOverflow("feature products overflowed during sampling")

    m2 = float(sps.moment(z, moment=2))
    m4 = float(sps.moment(z, moment=4))
    analytic = None
    if mech.family is not Family.TRIG:
        analytic = de_variance(mech.as_de(x.shape[0]), x, y)

    return VarianceReport(
        kernel_value=float(checked_exp(x @ y)),
        analytic_var=analytic,
        empirical_var=float(np.var(z, ddof=1)),
        empirical_se=float(np.sqrt(max(m4 - m2**2, 0.0) / n)),
        n_samples=n,
    )
