"""Exact scaled softmax kernel K^(alpha)(x, y) = exp(alpha |x|^2 + x.y + alpha |y|^2)
and the data moment statistics the parameter solvers consume."""

import logging
from dataclasses import dataclass

import numpy as np

from errors import DimensionMismatch, InvalidArgument, NumericOverflow

logger = logging.getLogger(__name__)

# Largest exponent whose exp is still a finite float64
LOG_MAX = float(np.log(np.finfo(float).max))


@dataclass(frozen=True)
class KernelSpec:
    alpha: float = 0.0  # 0 is the softmax kernel, -1/2 the Gaussian kernel

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise InvalidArgument(f"alpha must be finite, got {self.alpha}")


@dataclass(frozen=True)
class PointSet:
    """A set of L points in R^d stored row-wise"""

    points: np.ndarray  # L x d

    def __post_init__(self):
        pts = self.points
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DimensionMismatch(f"points must be a non-empty L x d matrix, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("points have non-finite entries")

    @classmethod
    def of(cls, points) -> "PointSet":
        """Build from anything array-like; a single vector becomes a 1 x d set"""
        return cls(points=np.atleast_2d(np.asarray(points, dtype=float)))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def scaled(self, factor: float) -> "PointSet":
        return PointSet(points=self.points * factor)

    def sq_norms(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.points, self.points)


@dataclass(frozen=True)
class MomentStats:
    """Second-order statistics of a pair of point sets"""

    m1: np.ndarray  # (1/Lx) sum x x^T
    m2: np.ndarray  # (1/Ly) sum y y^T
    mu3: float  # d^-1 mean(x) . mean(y)
    mu4: np.ndarray  # mean(x)
    mu5: np.ndarray  # mean(y)
    sx: float  # avg |x|^2
    sy: float  # avg |y|^2
    diag_x: np.ndarray  # per-coordinate sum of x_l^2
    diag_y: np.ndarray  # per-coordinate sum of y_l^2
    n_x: int = 1
    n_y: int = 1

    @property
    def dim(self) -> int:
        return self.m1.shape[0]

    @property
    def avg_pair_sq_norm(self) -> float:
        """Mean of |x + y|^2 over all (x, y) pairs"""
        return float(np.trace(self.m1) + np.trace(self.m2) + 2.0 * self.dim * self.mu3)


def checked_exp(exponent):
    """exp that raises NumericOverflow instead of returning inf"""
    arr = np.asarray(exponent, dtype=float)
    if np.any(arr > LOG_MAX):
        raise NumericOverflow(
            f"exponent {float(np.max(arr)):.6g} exceeds the float64 range ({LOG_MAX:.6g})"
        )
    return np.exp(arr)


def _check_vectors(x: np.ndarray, y: np.ndarray):
    if x.ndim != 1 or x.shape != y.shape:
        raise DimensionMismatch(f"x {x.shape} and y {y.shape} must be vectors of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidArgument("x and y must be finite")


def log_k_alpha(x, y, spec: KernelSpec = KernelSpec()) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_vectors(x, y)
    return float(spec.alpha * (x @ x) + x @ y + spec.alpha * (y @ y))


def k_alpha(x, y, spec: KernelSpec = KernelSpec()) -> float:
    """K^(alpha)(x, y), raising NumericOverflow when the value is not representable"""
    return float(checked_exp(log_k_alpha(x, y, spec)))


def _check_pair(xs: PointSet, ys: PointSet):
    if xs.dim != ys.dim:
        raise DimensionMismatch(f"point sets disagree on dimension: {xs.dim} vs {ys.dim}")


def log_kernel_matrix(xs: PointSet, ys: PointSet, spec: KernelSpec = KernelSpec()) -> np.ndarray:
    """Entrywise log of the kernel matrix; rows index xs, columns ys"""
    _check_pair(xs, ys)
    return (
        xs.points @ ys.points.T
        + spec.alpha * xs.sq_norms()[:, None]
        + spec.alpha * ys.sq_norms()[None, :]
    )


def kernel_matrix(xs: PointSet, ys: PointSet, spec: KernelSpec = KernelSpec()) -> np.ndarray:
    """
    Exact kernel matrix K_ij = K^(alpha)(x_i, y_j).

    The sets may differ in size (test-vs-train kernels); they must share d.
    """
    return checked_exp(log_kernel_matrix(xs, ys, spec))


def moment_stats(xs: PointSet, ys: PointSet) -> MomentStats:
    """One pass over both sets collecting everything the solvers need"""
    _check_pair(xs, ys)
    x, y = xs.points, ys.points
    d = xs.dim

    m1 = x.T @ x / xs.size
    m2 = y.T @ y / ys.size
    mu4 = x.mean(axis=0)
    mu5 = y.mean(axis=0)
    diag_x = np.einsum("ij,ij->j", x, x)
    diag_y = np.einsum("ij,ij->j", y, y)

    return MomentStats(
        m1=0.5 * (m1 + m1.T),
        m2=0.5 * (m2 + m2.T),
        mu3=float(mu4 @ mu5) / d,
        mu4=mu4,
        mu5=mu5,
        sx=float(diag_x.sum()) / xs.size,
        sy=float(diag_y.sum()) / ys.size,
        diag_x=diag_x,
        diag_y=diag_y,
        n_x=xs.size,
        n_y=ys.size,
    )
