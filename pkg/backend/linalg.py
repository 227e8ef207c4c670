"""Small dense linear algebra and the seeded Gaussian draws every estimator uses.

Eigenvalues and singular values come back sorted non-ascending with ties kept in
the order the LAPACK driver produced them. Any function that consumes
randomness takes an explicit ``numpy.random.Generator``.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg
from scipy import stats

from errors import (
    AsymmetricInput,
    DimensionMismatch,
    InvalidArgument,
    NoConvergence,
    NonPsdMatrix,
)

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-8  # relative Frobenius asymmetry accepted by sym_eig
PSD_CLAMP_RTOL = 1e-10  # eigenvalues in [-rtol * trace, 0) are clamped to 0
ORDER_ATOL = 1e-12


class DrawScheme(str, Enum):
    IID = "iid"
    ORTHOGONAL = "orthogonal"
    QMC = "qmc"


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition s = q diag(lam) q^T with lam non-ascending"""

    q: np.ndarray  # columns are eigenvectors
    lam: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.q * self.lam) @ self.q.T


@dataclass(frozen=True)
class SvdResult:
    """Singular value decomposition a = u diag(sigma) v^T"""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


@dataclass(frozen=True)
class FeatureDraws:
    """A block of random-feature draws omega^(1..M), plus TrigRF phases"""

    omegas: np.ndarray  # M x d
    phases: Optional[np.ndarray] = None  # length M, in [0, 2 pi)
    scheme: DrawScheme = DrawScheme.IID

    def __post_init__(self):
        if self.omegas.ndim != 2:
            raise DimensionMismatch(f"omegas must be M x d, got shape {self.omegas.shape}")
        if self.phases is not None and self.phases.shape != (self.omegas.shape[0],):
            raise DimensionMismatch(
                f"phases must have length {self.omegas.shape[0]}, got {self.phases.shape}"
            )

    @property
    def count(self) -> int:
        return self.omegas.shape[0]

    @property
    def dim(self) -> int:
        return self.omegas.shape[1]

    def with_phases(self, rng: np.random.Generator) -> "FeatureDraws":
        """Attach uniform phases on [0, 2 pi) for TrigRFs"""
        phases = rng.uniform(0.0, 2.0 * np.pi, size=self.count)
        return FeatureDraws(omegas=self.omegas, phases=phases, scheme=self.scheme)


# ============================================================================
# Random streams
# ============================================================================


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based stream for a seed"""
    return np.random.Generator(np.random.Philox(seed))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for the cell identified by ``keys`` under ``seed``.

    The stream depends only on (seed, keys), never on which thread or in which
    order cells run.
    """
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


# ============================================================================
# Decompositions
# ============================================================================


def _as_square(s, name: str) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return arr


def sym_eig(s, psd: bool = False) -> SymEig:
    """
    Eigendecomposition of a symmetric matrix, eigenvalues non-ascending.

    Args:
        s: d x d symmetric matrix
        psd: clamp roundoff-negative eigenvalues to zero and reject genuinely
            negative ones

    Returns:
        SymEig with orthogonal q and sorted lam
    """
    arr = _as_square(s, "s")
    norm = np.linalg.norm(arr)
    asymmetry = np.linalg.norm(arr - arr.T)
    if asymmetry > SYMMETRY_RTOL * norm:
        raise AsymmetricInput(
            f"matrix is not symmetric: asymmetry {asymmetry:.3e} vs norm {norm:.3e}"
        )
    sym = 0.5 * (arr + arr.T)

    try:
        lam, q = scipy.linalg.eigh(sym)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NoConvergence(f"symmetric eigendecomposition failed: {e}") from e

    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    q = q[:, order]

    if psd:
        tol = PSD_CLAMP_RTOL * abs(np.trace(sym)) + 64 * np.finfo(float).eps * norm
        if lam.size and lam[-1] < -tol:
            raise NonPsdMatrix(
                f"matrix has eigenvalue {lam[-1]:.3e} below the PSD tolerance {-tol:.3e}"
            )
        lam = np.where(lam < 0.0, 0.0, lam)

    return SymEig(q=q, lam=lam)


def svd(a) -> SvdResult:
    """SVD with non-negative singular values sorted non-ascending"""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatch(f"a must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("a has non-finite entries")
    try:
        u, sigma, vh = scipy.linalg.svd(arr)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NoConvergence(f"SVD failed: {e}") from e
    return SvdResult(u=u, sigma=sigma, v=vh.T)


def sym_power(s, power: float) -> np.ndarray:
    """Symmetric matrix power of a PSD matrix (power < 0 needs nonsingular s)"""
    eig = sym_eig(s, psd=True)
    if power < 0 and (eig.lam.size == 0 or eig.lam[-1] <= 0.0):
        raise NonPsdMatrix("negative power of a singular matrix")
    return (eig.q * eig.lam**power) @ eig.q.T


# ============================================================================
# Gaussian draws
# ============================================================================


def _check_counts(m: int, d: int):
    if m < 1 or d < 1:
        raise InvalidArgument(f"need m >= 1 and d >= 1, got m={m}, d={d}")


def haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed d x d orthogonal matrix (QR of a Gaussian, sign-fixed)"""
    q, r = scipy.linalg.qr(rng.standard_normal((d, d)))
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * signs


def sample_gaussian(m: int, d: int, rng: np.random.Generator) -> FeatureDraws:
    """M iid N(0, I_d) rows"""
    _check_counts(m, d)
    return FeatureDraws(omegas=rng.standard_normal((m, d)), scheme=DrawScheme.IID)


def sample_orthogonal(m: int, d: int, rng: np.random.Generator) -> FeatureDraws:
    """
    Block-orthogonal Gaussian rows.

    Rows come in ceil(m / d) blocks of mutually orthogonal directions; each row
    is rescaled by an independent chi(d) norm so it stays marginally N(0, I_d).
    """
    _check_counts(m, d)
    n_blocks = -(-m // d)
    directions = np.vstack([haar_orthogonal(d, rng).T for _ in range(n_blocks)])[:m]
    norms = stats.chi.rvs(df=d, size=m, random_state=rng)
    return FeatureDraws(
        omegas=directions * np.asarray(norms)[:, None], scheme=DrawScheme.ORTHOGONAL
    )


def trace_max_pairing(e_diag, lam) -> float:
    """
    Maximum of Trace(diag(e) Q N Q^T) over orthogonal Q for N with spectrum lam.

    Pairs the entries of e sorted non-ascending with lam (rearrangement).
    """
    e = np.asarray(e_diag, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if e.ndim != 1 or e.shape != lam.shape:
        raise DimensionMismatch(f"e_diag {e.shape} and lam {lam.shape} must be equal vectors")
    if np.any(np.diff(lam) > ORDER_ATOL * (1.0 + np.abs(lam[:-1]))):
        raise InvalidArgument("lam must be sorted non-ascending")
    return float(np.sort(e)[::-1] @ lam)
