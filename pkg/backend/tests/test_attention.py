"""
Unit tests for exact and random-feature attention
"""

import numpy as np
import pytest

from attention import AttentionBatch, attention_error, exact_attention, rf_attention
from errors import DimensionMismatch, InvalidArgument, TrigUnsupported
from features import Family, Mechanism, draw_features, feature_values
from linalg import make_rng
from mechanisms import fit_for_attention


def _batch(rng, length: int = 6, d: int = 3, dv: int = 2) -> AttentionBatch:
    return AttentionBatch(
        q=rng.standard_normal((length, d)),
        k=rng.standard_normal((length, d)),
        v=rng.standard_normal((length, dv)),
    )


@pytest.mark.unit
class TestExactAttention:
    """Test suite for exact_attention"""

    def test_zero_queries_average_values(self, rng):
        b = AttentionBatch(q=np.zeros((4, 2)), k=np.zeros((4, 2)), v=rng.standard_normal((4, 3)))
        np.testing.assert_allclose(exact_attention(b), np.tile(b.v.mean(axis=0), (4, 1)))

    def test_single_token(self, rng):
        b = _batch(rng, length=1)
        np.testing.assert_allclose(exact_attention(b), b.v)

    def test_matches_explicit_softmax(self, rng):
        b = _batch(rng)
        logits = b.q @ b.k.T / np.sqrt(b.dim)
        weights = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(exact_attention(b), weights @ b.v, rtol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            AttentionBatch(q=np.zeros((3, 2)), k=np.zeros((3, 3)), v=np.zeros((3, 1)))
        with pytest.raises(DimensionMismatch):
            AttentionBatch(q=np.zeros((3, 2)), k=np.zeros((3, 2)), v=np.zeros((2, 1)))
        with pytest.raises(InvalidArgument):
            AttentionBatch(q=np.full((1, 1), np.inf), k=np.zeros((1, 1)), v=np.zeros((1, 1)))


@pytest.mark.unit
class TestRfAttention:
    """Test suite for rf_attention"""

    def test_constant_values_pass_through(self, rng):
        b = _batch(rng)
        b = AttentionBatch(q=b.q, k=b.k, v=np.tile([[1.5, -2.0]], (b.length, 1)))
        out, _ = rf_attention(b, Mechanism(Family.POS), 16, rng)
        np.testing.assert_allclose(out, b.v, rtol=1e-12)

    def test_zero_inputs_give_column_means(self, rng):
        """Constant features make the attention uniform"""
        b = AttentionBatch(q=np.zeros((5, 2)), k=np.zeros((5, 2)), v=rng.standard_normal((5, 2)))
        out, diagnostics = rf_attention(b, Mechanism(Family.POS), 8, rng)
        np.testing.assert_allclose(out, np.tile(b.v.mean(axis=0), (5, 1)), rtol=1e-12)
        assert diagnostics.features == 8

    def test_trig_rejected(self, rng):
        with pytest.raises(TrigUnsupported):
            rf_attention(_batch(rng), Mechanism(Family.TRIG), 8, rng)

    def test_stabilization_cancels(self, rng):
        """Shifted features give the same output as the raw ratio"""
        b = _batch(rng)
        mech = Mechanism(Family.POS)
        draws = draw_features(mech, 16, b.dim, rng)
        xs, ys = b.scaled_sets()
        p = feature_values(mech, draws, xs, 1)
        s = feature_values(mech, draws, ys, 2)
        raw = (p @ (s.T @ b.v)) / (p @ s.sum(axis=0))[:, None]
        out, _ = rf_attention(b, mech, 16, rng, draws=draws)
        np.testing.assert_allclose(out, raw, rtol=1e-10)

    def test_weights_are_right_stochastic(self, rng):
        """Rows of the implied attention matrix are non-negative and sum to one"""
        b = _batch(rng)
        mech = fit_for_attention(b, "sderf").mechanism
        draws = draw_features(mech, 16, b.dim, rng)
        eye = AttentionBatch(q=b.q, k=b.k, v=np.eye(b.length))
        weights, diagnostics = rf_attention(eye, mech, 16, rng, draws=draws)
        assert np.all(weights >= 0.0)
        np.testing.assert_allclose(weights.sum(axis=1), np.ones(b.length), rtol=1e-12)
        assert diagnostics.min_denominator > 0.0

    def test_error_metric(self, rng):
        y = rng.standard_normal((3, 2))
        assert attention_error(y, y) == 0.0
        assert attention_error(y, 2.0 * y) == pytest.approx(1.0)
        with pytest.raises(DimensionMismatch):
            attention_error(y, y[:2])

    @pytest.mark.statistical
    def test_error_shrinks_with_features(self):
        """Median error over seeds drops from M = 8 to M = 256"""
        rng = make_rng(2)
        b = AttentionBatch(
            q=0.5 * rng.standard_normal((128, 8)),
            k=0.5 * rng.standard_normal((128, 8)),
            v=rng.standard_normal((128, 8)),
        )
        exact = exact_attention(b)
        mech = fit_for_attention(b, "sderf").mechanism

        def median_error(m):
            outputs = [rf_attention(b, mech, m, make_rng(s))[0] for s in range(10)]
            errors = [attention_error(exact, y) for y in outputs]
            return np.median(errors)

        assert median_error(256) < median_error(8)
