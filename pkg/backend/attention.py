"""Bidirectional softmax attention, exact and through positive random features."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import softmax

from errors import DegenerateDenominator, DimensionMismatch, InvalidArgument, TrigUnsupported
from features import Mechanism, draw_features, log_feature_values
from kernelcore import PointSet
from linalg import FeatureDraws

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttentionBatch:
    q: np.ndarray  # L x d queries
    k: np.ndarray  # L x d keys
    v: np.ndarray  # L x d_v values

    def __post_init__(self):
        if self.q.ndim != 2 or self.q.shape != self.k.shape:
            raise DimensionMismatch(f"queries {self.q.shape} and keys {self.k.shape} must match")
        if self.v.ndim != 2 or self.v.shape[0] != self.q.shape[0]:
            raise DimensionMismatch(f"values {self.v.shape} must have {self.q.shape[0]} rows")
        if not all(np.all(np.isfinite(a)) for a in (self.q, self.k, self.v)):
            raise InvalidArgument("attention inputs must be finite")

    @property
    def length(self) -> int:
        return self.q.shape[0]

    @property
    def dim(self) -> int:
        return self.q.shape[1]

    def scaled_sets(self) -> Tuple[PointSet, PointSet]:
        """Queries and keys scaled by d^-1/4, so softmax(q k^T / sqrt(d)) uses K^(0)"""
        scale = self.dim**-0.25
        return PointSet(points=self.q * scale), PointSet(points=self.k * scale)


@dataclass(frozen=True)
class AttentionDiagnostics:
    min_denominator: float  # after per-row stabilization
    log_feature_min: float
    log_feature_max: float
    features: int


def exact_attention(b: AttentionBatch) -> np.ndarray:
    """softmax(q k^T / sqrt(d)) v, with per-row max subtraction"""
    logits = b.q @ b.k.T / np.sqrt(b.dim)
    return softmax(logits, axis=1) @ b.v


def rf_attention(
    b: AttentionBatch,
    mech: Mechanism,
    m: int,
    rng: np.random.Generator,
    draws: Optional[FeatureDraws] = None,
) -> Tuple[np.ndarray, AttentionDiagnostics]:
    """
    Linear-time attention estimate P (S^T V) / P (S^T 1).

    Query features are shifted by their row maximum and key features by their
    global maximum before exponentiation; both shifts cancel in the ratio.

    Args:
        b: queries, keys and values
        mech: a positive feature mechanism
        m: number of random features
        rng: stream for the feature draws
        draws: reuse these draws instead of sampling

    Returns:
        L x d_v output and diagnostics
    """
    if not mech.family.positive:
        raise TrigUnsupported("attention needs positive features; TrigRF normalizers can vanish")
    xs, ys = b.scaled_sets()
    if draws is None:
        draws = draw_features(mech, m, b.dim, rng)

    log_p = log_feature_values(mech, draws, xs, 1)
    log_s = log_feature_values(mech, draws, ys, 2)
    diagnostics_range = (
        float(min(log_p.min(), log_s.min())),
        float(max(log_p.max(), log_s.max())),
    )
    p = np.exp(log_p - log_p.max(axis=1, keepdims=True))
    s = np.exp(log_s - log_s.max())

    numerator = p @ (s.T @ b.v)
    denominator = p @ s.sum(axis=0)
    bad = ~np.isfinite(denominator) | (denominator <= 0.0)
    if np.any(bad):
        raise DegenerateDenominator(
            f"attention normalizer vanished for query rows {np.flatnonzero(bad)[:10].tolist()}"
        )

    diagnostics = AttentionDiagnostics(
        min_denominator=float(denominator.min()),
        log_feature_min=diagnostics_range[0],
        log_feature_max=diagnostics_range[1],
        features=draws.count,
    )
    return numerator / denominator[:, None], diagnostics


def attention_error(y_exact, y_approx) -> float:
    """Relative Frobenius error"""
    y_exact = np.asarray(y_exact, dtype=float)
    y_approx = np.asarray(y_approx, dtype=float)
    if y_exact.shape != y_approx.shape:
        raise DimensionMismatch(f"shapes differ: {y_exact.shape} vs {y_approx.shape}")
    return float(np.linalg.norm(y_approx - y_exact) / (1e-30 + np.linalg.norm(y_exact)))
