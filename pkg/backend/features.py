"""Random-feature families for the softmax kernel and the low-rank estimator.

Every positive family is an exponential of a quadratic in (omega, x):

    f_k(omega, x) = D exp(omega^T A omega + omega^T B_k x + x^T C_k x)

with omega ~ N(0, I_d). TrigRFs are the one non-positive family. Feature
matrices P, S hold M^-1/2 f_1(omega_m, x_i) and M^-1/2 f_2(omega_m, y_j), so
P S^T is an unbiased estimate of the kernel matrix.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
import scipy.linalg

from errors import (
    ConstraintViolation,
    DimensionMismatch,
    InvalidParameters,
    MissingPhase,
    NumericOverflow,
    SchemeMismatch,
    TrigUnsupported,
)
from kernelcore import LOG_MAX, PointSet
from linalg import DrawScheme, FeatureDraws, sample_gaussian, sample_orthogonal
from qmc import QmcCorrelation, sample_qmc

logger = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-8
GE_TOL = 1e-12


class Family(str, Enum):
    TRIG = "trig"
    POS = "pos"
    GE = "ge"
    SADE = "sade"
    DE = "de"

    @property
    def positive(self) -> bool:
        return self is not Family.TRIG


# ============================================================================
# Parameter bundles
# ============================================================================


@dataclass(frozen=True)
class GEParams:
    """Scalar parameters of a generalized exponential feature"""

    a: float
    b: float  # sqrt(1 - 4a)
    c: float  # always -1/2
    log_d_coeff: float  # (d/4) log(1 - 4a)
    d_dim: int

    def __post_init__(self):
        if not 1.0 - 8.0 * self.a > 0.0:
            raise InvalidParameters(f"GE parameter a={self.a} violates 1 - 8a > 0")
        if abs(self.b - np.sqrt(1.0 - 4.0 * self.a)) > GE_TOL:
            raise InvalidParameters("GE parameter b must equal sqrt(1 - 4a)")
        if self.c != -0.5:
            raise InvalidParameters("GE parameter c must be -1/2")
        expected = self.d_dim / 4.0 * np.log1p(-4.0 * self.a)
        if abs(self.log_d_coeff - expected) > GE_TOL * (1.0 + abs(expected)):
            raise InvalidParameters("GE log_d_coeff must equal (d/4) log(1 - 4a)")

    @classmethod
    def from_a(cls, a: float, d: int) -> "GEParams":
        a = float(a)
        if not 1.0 - 8.0 * a > 0.0:
            raise InvalidParameters(f"GE parameter a={a} violates 1 - 8a > 0")
        return cls(
            a=a,
            b=float(np.sqrt(1.0 - 4.0 * a)),
            c=-0.5,
            log_d_coeff=d / 4.0 * float(np.log1p(-4.0 * a)),
            d_dim=d,
        )


@dataclass(frozen=True)
class SADEParams:
    """GE features applied to Psi x and Psi^-1 y"""

    psi: np.ndarray  # positive diagonal of Psi
    ge: GEParams

    def __post_init__(self):
        if self.psi.shape != (self.ge.d_dim,):
            raise DimensionMismatch(f"psi has shape {self.psi.shape}, expected ({self.ge.d_dim},)")
        if not (np.all(np.isfinite(self.psi)) and np.all(self.psi > 0.0)):
            raise InvalidParameters("psi must be finite and strictly positive")


@dataclass(frozen=True)
class DEParams:
    """
    Dense-exponential parameters with diagonal A.

    Valid bundles satisfy B1^T (I - 4A)^-1 B2 = I and
    C_k = -1/2 B_k^T (I - 4A)^-1 B_k; log_det_d is log D = 1/4 log det(I - 4A).
    """

    a_diag: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    log_det_d: float

    def __post_init__(self):
        d = self.a_diag.shape[0]
        for name in ("b1", "b2", "c1", "c2"):
            if getattr(self, name).shape != (d, d):
                raise DimensionMismatch(f"{name} must be {d} x {d}")
        if not np.all(np.isfinite(self.a_diag)) or np.max(8.0 * self.a_diag) >= 1.0:
            raise InvalidParameters("every a_l must satisfy 8 a_l < 1")

    @property
    def dim(self) -> int:
        return self.a_diag.shape[0]

    @classmethod
    def from_matrices(cls, a_diag, b1, b2) -> "DEParams":
        """Complete (A, B1, B2) with the C_k and D the unbiasedness conditions force"""
        a_diag = np.asarray(a_diag, dtype=float)
        b1 = np.asarray(b1, dtype=float)
        b2 = np.asarray(b2, dtype=float)
        if np.max(8.0 * a_diag) >= 1.0:
            raise InvalidParameters("every a_l must satisfy 8 a_l < 1")
        g = 1.0 / (1.0 - 4.0 * a_diag)
        c1 = -0.5 * b1.T @ (g[:, None] * b1)
        c2 = -0.5 * b2.T @ (g[:, None] * b2)
        return cls(
            a_diag=a_diag,
            b1=b1,
            b2=b2,
            c1=0.5 * (c1 + c1.T),
            c2=0.5 * (c2 + c2.T),
            log_det_d=0.25 * float(np.log1p(-4.0 * a_diag).sum()),
        )

    @classmethod
    def from_b1(cls, a_diag, b1) -> "DEParams":
        """B2 = (I - 4A) B1^-T; B1 must be invertible"""
        a_diag = np.asarray(a_diag, dtype=float)
        b1 = np.asarray(b1, dtype=float)
        try:
            b1_inv_t = scipy.linalg.inv(b1).T
        except (np.linalg.LinAlgError, ValueError) as e:
            raise InvalidParameters(f"B1 is not invertible: {e}") from e
        return cls.from_matrices(a_diag, b1, (1.0 - 4.0 * a_diag)[:, None] * b1_inv_t)

    @classmethod
    def from_ge(cls, ge: GEParams) -> "DEParams":
        eye = np.eye(ge.d_dim)
        return cls(
            a_diag=np.full(ge.d_dim, ge.a),
            b1=ge.b * eye,
            b2=ge.b * eye,
            c1=ge.c * eye,
            c2=ge.c * eye,
            log_det_d=ge.log_d_coeff,
        )

    @classmethod
    def from_sade(cls, sade: SADEParams) -> "DEParams":
        ge = sade.ge
        return cls(
            a_diag=np.full(ge.d_dim, ge.a),
            b1=np.diag(ge.b * sade.psi),
            b2=np.diag(ge.b / sade.psi),
            c1=np.diag(-0.5 * sade.psi**2),
            c2=np.diag(-0.5 / sade.psi**2),
            log_det_d=ge.log_d_coeff,
        )

    def constraint_residuals(self) -> tuple:
        """Frobenius residuals of the cross, C1 and C2 conditions"""
        g = 1.0 / (1.0 - 4.0 * self.a_diag)
        cross = self.b1.T @ (g[:, None] * self.b2) - np.eye(self.dim)
        r1 = self.c1 + 0.5 * self.b1.T @ (g[:, None] * self.b1)
        r2 = self.c2 + 0.5 * self.b2.T @ (g[:, None] * self.b2)
        return tuple(float(np.linalg.norm(r)) for r in (cross, r1, r2))

    def check_constraints(self, tol: float = CONSTRAINT_TOL):
        """Raise ConstraintViolation if the unbiasedness conditions fail"""
        scale = 1.0 + np.linalg.norm(self.b1) * np.linalg.norm(self.b2)
        residuals = self.constraint_residuals()
        if max(residuals) > tol * scale:
            raise ConstraintViolation(
                "DE parameters violate the unbiasedness conditions: "
                f"cross={residuals[0]:.3e}, c1={residuals[1]:.3e}, c2={residuals[2]:.3e}"
            )
        expected = 0.25 * float(np.log1p(-4.0 * self.a_diag).sum())
        if abs(self.log_det_d - expected) > 1e-10 * (1.0 + abs(expected)):
            raise ConstraintViolation("log_det_d does not match 1/4 log det(I - 4A)")


FamilyParams = Union[GEParams, SADEParams, DEParams, None]


# ============================================================================
# Mechanism
# ============================================================================


@dataclass(frozen=True)
class Mechanism:
    """One random-feature family with its parameters and draw scheme"""

    family: Family
    params: FamilyParams = None
    scheme: DrawScheme = DrawScheme.IID
    qmc: Optional[QmcCorrelation] = None
    name: Optional[str] = None  # display label, e.g. the registry name

    def __post_init__(self):
        expected = {
            Family.TRIG: type(None),
            Family.POS: type(None),
            Family.GE: GEParams,
            Family.SADE: SADEParams,
            Family.DE: DEParams,
        }[self.family]
        if not isinstance(self.params, expected):
            raise InvalidParameters(
                f"{self.family.value} mechanism needs {expected.__name__} parameters"
            )
        if self.scheme is DrawScheme.QMC:
            if self.family is Family.TRIG:
                raise TrigUnsupported("QMC draws are only defined for positive families")
            if self.qmc is None:
                raise SchemeMismatch("QMC scheme requires a QmcCorrelation")
            dim = self.dim
            if dim is not None and self.qmc.dim != dim:
                raise DimensionMismatch(
                    f"QMC correlation has {self.qmc.dim} coordinates, expected {dim}"
                )
        elif self.qmc is not None:
            raise SchemeMismatch(f"QmcCorrelation given with scheme {self.scheme.value}")

    @property
    def label(self) -> str:
        return self.name or self.family.value

    @property
    def dim(self) -> Optional[int]:
        """Feature dimension fixed by the parameters, None for Trig/Pos"""
        if isinstance(self.params, GEParams):
            return self.params.d_dim
        if isinstance(self.params, SADEParams):
            return self.params.ge.d_dim
        if isinstance(self.params, DEParams):
            return self.params.dim
        return None

    def check_dim(self, d: int):
        dim = self.dim
        if dim is not None and dim != d:
            raise DimensionMismatch(f"{self.label} mechanism is fitted for d={dim}, data has d={d}")

    def as_de(self, d: int) -> DEParams:
        """Equivalent DE parameters for any positive family"""
        self.check_dim(d)
        if self.family is Family.TRIG:
            raise TrigUnsupported("TrigRFs have no exponential-family form")
        if self.family is Family.POS:
            return DEParams.from_ge(GEParams.from_a(0.0, d))
        if self.family is Family.GE:
            return DEParams.from_ge(self.params)
        if self.family is Family.SADE:
            return DEParams.from_sade(self.params)
        return self.params


@dataclass(frozen=True)
class FeaturePair:
    """Feature matrices P (L_x x M) and S (L_y x M) with K_hat = P S^T"""

    p: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        if self.p.ndim != 2 or self.s.ndim != 2 or self.p.shape[1] != self.s.shape[1]:
            raise DimensionMismatch(f"P {self.p.shape} and S {self.s.shape} must share M columns")
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.s))):
            raise NumericOverflow("feature matrices have non-finite entries")


# ============================================================================
# Feature evaluation
# ============================================================================


def draw_features(mech: Mechanism, m: int, d: int, rng: np.random.Generator) -> FeatureDraws:
    """Draw M feature vectors with the mechanism's scheme (plus phases for Trig)"""
    mech.check_dim(d)
    if mech.scheme is DrawScheme.ORTHOGONAL:
        draws = sample_orthogonal(m, d, rng)
    elif mech.scheme is DrawScheme.QMC:
        block = mech.qmc.m
        blocks = [sample_qmc(mech.qmc, d, rng).omegas for _ in range(-(-m // block))]
        draws = FeatureDraws(omegas=np.vstack(blocks)[:m], scheme=DrawScheme.QMC)
    else:
        draws = sample_gaussian(m, d, rng)
    if mech.family is Family.TRIG:
        draws = draws.with_phases(rng)
    return draws


def _ge_exponent(ge: GEParams, omegas: np.ndarray, x: np.ndarray) -> np.ndarray:
    sq_omega = np.einsum("ij,ij->i", omegas, omegas)
    sq_x = np.einsum("ij,ij->i", x, x)
    return (
        ge.a * sq_omega[None, :]
        + ge.b * (x @ omegas.T)
        + ge.c * sq_x[:, None]
        + ge.log_d_coeff
    )


def _de_exponent(p: DEParams, omegas: np.ndarray, x: np.ndarray, which: int) -> np.ndarray:
    b = p.b1 if which == 1 else p.b2
    c = p.c1 if which == 1 else p.c2
    projected = omegas @ b  # row m is omega_m^T B_k
    quad = np.einsum("ij,jk,ik->i", x, c, x)
    return (
        (omegas**2 @ p.a_diag)[None, :] + x @ projected.T + quad[:, None] + p.log_det_d
    )


def _check_inputs(mech: Mechanism, draws: FeatureDraws, xs: PointSet, which: int):
    if which not in (1, 2):
        raise DimensionMismatch(f"which must be 1 or 2, got {which}")
    if draws.dim != xs.dim:
        raise DimensionMismatch(f"draws have d={draws.dim}, points have d={xs.dim}")
    mech.check_dim(xs.dim)


def log_feature_values(
    mech: Mechanism, draws: FeatureDraws, xs: PointSet, which: int, alpha: float = 0.0
) -> np.ndarray:
    """
    L x M matrix of log f_which(omega_m, x_i) for a positive family.

    Args:
        alpha: adds alpha |x|^2, turning softmax-kernel features into features
            for K^(alpha)
    """
    _check_inputs(mech, draws, xs, which)
    x = xs.points
    omegas = draws.omegas

    if mech.family is Family.TRIG:
        raise TrigUnsupported("TrigRFs take negative values and have no log form")
    if mech.family is Family.POS:
        exponent = _ge_exponent(GEParams.from_a(0.0, xs.dim), omegas, x)
    elif mech.family is Family.GE:
        exponent = _ge_exponent(mech.params, omegas, x)
    elif mech.family is Family.SADE:
        scale = mech.params.psi if which == 1 else 1.0 / mech.params.psi
        exponent = _ge_exponent(mech.params.ge, omegas, x * scale)
    else:
        exponent = _de_exponent(mech.params, omegas, x, which)

    if alpha:
        exponent = exponent + alpha * xs.sq_norms()[:, None]
    return exponent


def _exp_with_context(exponent: np.ndarray, which: int) -> np.ndarray:
    if exponent.size and np.max(exponent) > LOG_MAX:
        i, m = np.unravel_index(int(np.argmax(exponent)), exponent.shape)
        raise NumericOverflow(
            f"feature f{which} overflows at (i={i}, m={m}): exponent {exponent[i, m]:.6g}"
        )
    return np.exp(exponent)


def feature_values(
    mech: Mechanism, draws: FeatureDraws, xs: PointSet, which: int, alpha: float = 0.0
) -> np.ndarray:
    """L x M matrix of f_which(omega_m, x_i), unnormalized"""
    if mech.family is not Family.TRIG:
        return _exp_with_context(log_feature_values(mech, draws, xs, which, alpha), which)

    _check_inputs(mech, draws, xs, which)
    if draws.phases is None:
        raise MissingPhase("TrigRFs need a phase per draw")
    envelope = _exp_with_context(((0.5 + alpha) * xs.sq_norms())[:, None], which)
    return np.sqrt(2.0) * envelope * np.cos(xs.points @ draws.omegas.T + draws.phases[None, :])


def eval_feature(
    mech: Mechanism,
    omega,
    x,
    which: int,
    theta: Optional[float] = None,
) -> float:
    """Single feature value f_which(omega, x)"""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    phases = None if theta is None else np.array([float(theta)])
    if mech.family is Family.TRIG and phases is None:
        raise MissingPhase("TrigRFs need a phase theta")
    draws = FeatureDraws(omegas=omega, phases=phases, scheme=mech.scheme)
    return float(feature_values(mech, draws, PointSet.of(x), which)[0, 0])


def build_features(
    mech: Mechanism,
    draws: FeatureDraws,
    xs: PointSet,
    ys: PointSet,
    alpha: float = 0.0,
) -> FeaturePair:
    """
    Assemble P and S for the low-rank kernel estimate.

    Args:
        mech: feature family
        draws: M draws, sampled with the mechanism's scheme
        xs: query-side points (rows of P)
        ys: key-side points (rows of S)
        alpha: kernel scaling, features estimate K^(alpha) instead of K^(0)

    Returns:
        FeaturePair with p[i, m] = M^-1/2 f1(omega_m, x_i), s[j, m] = M^-1/2 f2(omega_m, y_j)
    """
    if draws.scheme is not mech.scheme:
        raise SchemeMismatch(
            f"draws use scheme {draws.scheme.value}, mechanism expects {mech.scheme.value}"
        )
    if xs.dim != ys.dim:
        raise DimensionMismatch(f"point sets disagree on dimension: {xs.dim} vs {ys.dim}")
    norm = 1.0 / np.sqrt(draws.count)
    return FeaturePair(
        p=norm * feature_values(mech, draws, xs, 1, alpha),
        s=norm * feature_values(mech, draws, ys, 2, alpha),
    )


def approx_kernel(fp: FeaturePair) -> np.ndarray:
    return fp.p @ fp.s.T


def approx_apply(fp: FeaturePair, c) -> np.ndarray:
    """K_hat C computed as P (S^T C), never forming K_hat"""
    c = np.asarray(c, dtype=float)
    if c.ndim not in (1, 2) or c.shape[0] != fp.s.shape[0]:
        raise DimensionMismatch(f"C has shape {c.shape}, expected {fp.s.shape[0]} rows")
    return fp.p @ (fp.s.T @ c)
