"""
Unit tests for the random-feature families

Tests:
- Parameter bundles and the unbiasedness conditions
- Single feature values
- Low-rank estimator assembly
- Seeded unbiasedness of every positive family
"""

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from errors import (
    ConstraintViolation,
    DimensionMismatch,
    InvalidParameters,
    MissingPhase,
    NumericOverflow,
    SchemeMismatch,
    TrigUnsupported,
)
from features import (
    DEParams,
    FeaturePair,
    Family,
    GEParams,
    Mechanism,
    SADEParams,
    approx_apply,
    approx_kernel,
    build_features,
    draw_features,
    eval_feature,
    feature_values,
    log_feature_values,
)
from kernelcore import PointSet, moment_stats
from linalg import DrawScheme, FeatureDraws, make_rng, sample_gaussian
from qmc import QmcCorrelation
from solvers import fit_aderf, fit_sderf


def _quadrature_grid(n: int = 64):
    """2-d Gauss-Hermite nodes and weights for E over N(0, I_2)"""
    nodes, weights = hermegauss(n)
    grid = np.array([[a, b] for a in nodes for b in nodes])
    w = np.outer(weights, weights).ravel() / (2.0 * np.pi)
    return grid, w


@pytest.fixture
def de_params(rng):
    a_diag = np.array([-0.3, -0.05])
    b1 = rng.standard_normal((2, 2)) + 2.0 * np.eye(2)
    return DEParams.from_b1(a_diag, b1)


# ============================================================================
# Parameters
# ============================================================================


@pytest.mark.unit
class TestParams:
    """Test suite for GE, SADE and DE parameter bundles"""

    def test_ge_at_zero(self):
        ge = GEParams.from_a(0.0, 3)
        assert ge.b == 1.0 and ge.c == -0.5 and ge.log_d_coeff == 0.0

    def test_ge_rejects_large_a(self):
        with pytest.raises(InvalidParameters):
            GEParams.from_a(0.2, 2)

    def test_ge_rejects_inconsistent_b(self):
        with pytest.raises(InvalidParameters):
            GEParams(a=0.0, b=2.0, c=-0.5, log_d_coeff=0.0, d_dim=1)

    def test_from_b1_satisfies_constraints(self, de_params):
        assert max(de_params.constraint_residuals()) <= 1e-10
        de_params.check_constraints()

    def test_broken_cross_condition(self, de_params):
        broken = DEParams(
            a_diag=de_params.a_diag,
            b1=de_params.b1,
            b2=2.0 * de_params.b2,
            c1=de_params.c1,
            c2=de_params.c2,
            log_det_d=de_params.log_det_d,
        )
        with pytest.raises(ConstraintViolation):
            broken.check_constraints()

    def test_de_rejects_large_a(self):
        with pytest.raises(InvalidParameters):
            DEParams.from_matrices([0.2, 0.0], np.eye(2), np.eye(2))

    def test_ge_as_de_matches_features(self, rng):
        """GE and its DE embedding give identical feature values"""
        ge = GEParams.from_a(-0.2, 3)
        xs = PointSet(points=0.5 * rng.standard_normal((4, 3)))
        draws = sample_gaussian(8, 3, rng)
        ge_mech = Mechanism(Family.GE, ge)
        de_mech = Mechanism(Family.DE, DEParams.from_ge(ge))
        for which in (1, 2):
            np.testing.assert_allclose(
                log_feature_values(ge_mech, draws, xs, which),
                log_feature_values(de_mech, draws, xs, which),
                atol=1e-12,
            )

    def test_sade_as_de_matches_features(self, rng):
        sade = SADEParams(psi=np.array([0.5, 2.0]), ge=GEParams.from_a(-0.1, 2))
        xs = PointSet(points=rng.standard_normal((3, 2)))
        draws = sample_gaussian(6, 2, rng)
        sade_mech = Mechanism(Family.SADE, sade)
        de_mech = Mechanism(Family.DE, DEParams.from_sade(sade))
        for which in (1, 2):
            np.testing.assert_allclose(
                log_feature_values(sade_mech, draws, xs, which),
                log_feature_values(de_mech, draws, xs, which),
                atol=1e-12,
            )
        DEParams.from_sade(sade).check_constraints()

    def test_sade_rejects_non_positive_psi(self):
        with pytest.raises(InvalidParameters):
            SADEParams(psi=np.array([1.0, 0.0]), ge=GEParams.from_a(0.0, 2))


@pytest.mark.unit
class TestMechanism:
    """Test suite for Mechanism validation"""

    def test_wrong_params_type(self):
        with pytest.raises(InvalidParameters):
            Mechanism(Family.GE, None)

    def test_qmc_needs_correlation(self):
        with pytest.raises(SchemeMismatch):
            Mechanism(Family.POS, scheme=DrawScheme.QMC)

    def test_qmc_rejects_trig(self):
        with pytest.raises(TrigUnsupported):
            Mechanism(Family.TRIG, scheme=DrawScheme.QMC, qmc=QmcCorrelation.uniform(0.0, 2, 4))

    def test_correlation_without_qmc_scheme(self):
        with pytest.raises(SchemeMismatch):
            Mechanism(Family.POS, qmc=QmcCorrelation.uniform(0.0, 2, 4))

    def test_trig_has_no_de_form(self):
        with pytest.raises(TrigUnsupported):
            Mechanism(Family.TRIG).as_de(2)

    def test_fitted_dimension_enforced(self, rng):
        mech = Mechanism(Family.GE, GEParams.from_a(0.0, 3))
        with pytest.raises(DimensionMismatch):
            draw_features(mech, 4, 2, rng)


# ============================================================================
# Single values
# ============================================================================


@pytest.mark.unit
class TestEvalFeature:
    """Test suite for eval_feature and feature_values"""

    def test_pos_at_origin(self):
        assert eval_feature(Mechanism(Family.POS), [0.0, 0.0], [0.0, 0.0], 1) == 1.0

    def test_pos_formula(self):
        omega, x = np.array([0.3, -1.0]), np.array([0.5, 0.25])
        expected = np.exp(omega @ x - 0.5 * x @ x)
        assert eval_feature(Mechanism(Family.POS), omega, x, 2) == pytest.approx(expected)

    def test_ge_at_zero_a_equals_pos(self, rng):
        omega, x = rng.standard_normal(3), rng.standard_normal(3)
        ge = Mechanism(Family.GE, GEParams.from_a(0.0, 3))
        assert eval_feature(ge, omega, x, 1) == pytest.approx(
            eval_feature(Mechanism(Family.POS), omega, x, 1), rel=1e-12
        )

    def test_trig_at_origin(self):
        """theta = 0, omega = 0, x = 0 gives sqrt 2"""
        value = eval_feature(Mechanism(Family.TRIG), [0.0], [0.0], 1, theta=0.0)
        assert value == pytest.approx(np.sqrt(2.0))

    def test_trig_needs_phase(self):
        with pytest.raises(MissingPhase):
            eval_feature(Mechanism(Family.TRIG), [0.0], [0.0], 1)
        with pytest.raises(MissingPhase):
            feature_values(
                Mechanism(Family.TRIG), FeatureDraws(omegas=np.zeros((2, 1))), PointSet.of([0.0]), 1
            )

    def test_trig_has_no_log_form(self, rng):
        draws = sample_gaussian(2, 1, rng).with_phases(rng)
        with pytest.raises(TrigUnsupported):
            log_feature_values(Mechanism(Family.TRIG), draws, PointSet.of([0.0]), 1)

    def test_overflow_reports_index(self):
        with pytest.raises(NumericOverflow, match="i=0, m=0"):
            eval_feature(Mechanism(Family.POS), [1000.0], [1.0], 1)

    def test_alpha_shift(self, rng):
        """alpha adds alpha |x|^2 to every log feature"""
        xs = PointSet(points=rng.standard_normal((3, 2)))
        draws = sample_gaussian(5, 2, rng)
        mech = Mechanism(Family.POS)
        diff = log_feature_values(mech, draws, xs, 1, alpha=-0.5) - log_feature_values(
            mech, draws, xs, 1
        )
        np.testing.assert_allclose(diff, -0.5 * np.tile(xs.sq_norms()[:, None], (1, 5)))

    def test_de_quadrature_is_unbiased(self, de_params):
        """E[f1 f2] = exp(x.y) by 64 x 64 Gauss-Hermite quadrature"""
        x, y = np.array([0.3, -0.2]), np.array([0.1, 0.4])
        grid, w = _quadrature_grid()
        mech = Mechanism(Family.DE, de_params)
        draws = FeatureDraws(omegas=grid)
        f1 = feature_values(mech, draws, PointSet.of(x), 1)[0]
        f2 = feature_values(mech, draws, PointSet.of(y), 2)[0]
        assert np.sum(w * f1 * f2) == pytest.approx(np.exp(x @ y), rel=1e-6)

    def test_trig_quadrature_is_unbiased(self):
        """Averaging the phase over a fine grid recovers exp(x.y) in d = 1"""
        x, y = np.array([0.4]), np.array([-0.3])
        nodes, weights = hermegauss(64)
        w = weights / np.sqrt(2.0 * np.pi)
        phases = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        mech = Mechanism(Family.TRIG)
        total = 0.0
        for theta in phases:
            draws = FeatureDraws(omegas=nodes[:, None], phases=np.full(64, theta))
            f1 = feature_values(mech, draws, PointSet.of(x), 1)[0]
            f2 = feature_values(mech, draws, PointSet.of(y), 2)[0]
            total += np.sum(w * f1 * f2) / len(phases)
        assert total == pytest.approx(np.exp(x @ y), rel=1e-8)


# ============================================================================
# Low-rank estimator
# ============================================================================


@pytest.mark.unit
class TestBuildFeatures:
    """Test suite for build_features and the estimator products"""

    def test_single_draw_at_origin(self):
        draws = FeatureDraws(omegas=np.zeros((4, 2)))
        zero = PointSet.of([0.0, 0.0])
        fp = build_features(Mechanism(Family.POS), draws, zero, zero)
        np.testing.assert_allclose(fp.p, np.full((1, 4), 0.5))
        assert approx_kernel(fp)[0, 0] == pytest.approx(1.0)

    def test_symmetric_family_gives_symmetric_estimate(self, rng, small_sets):
        xs, _ = small_sets
        draws = sample_gaussian(16, xs.dim, rng)
        k_hat = approx_kernel(build_features(Mechanism(Family.POS), draws, xs, xs))
        np.testing.assert_allclose(k_hat, k_hat.T, rtol=1e-12)
        assert np.all(k_hat > 0.0)

    def test_apply_matches_dense(self, rng, small_sets):
        xs, ys = small_sets
        fp = build_features(Mechanism(Family.POS), sample_gaussian(8, 4, rng), xs, ys)
        c = rng.standard_normal((ys.size, 3))
        np.testing.assert_allclose(approx_apply(fp, c), approx_kernel(fp) @ c, rtol=1e-10)
        np.testing.assert_array_equal(approx_apply(fp, np.zeros((ys.size, 3))), 0.0)
        np.testing.assert_allclose(
            approx_apply(fp, np.ones(ys.size)), approx_kernel(fp).sum(axis=1), rtol=1e-10
        )

    def test_apply_shape_mismatch(self, rng, small_sets):
        xs, ys = small_sets
        fp = build_features(Mechanism(Family.POS), sample_gaussian(8, 4, rng), xs, ys)
        with pytest.raises(DimensionMismatch):
            approx_apply(fp, np.ones(ys.size + 1))

    def test_scheme_mismatch(self, rng, small_sets):
        xs, ys = small_sets
        mech = Mechanism(Family.POS, scheme=DrawScheme.ORTHOGONAL)
        with pytest.raises(SchemeMismatch):
            build_features(mech, sample_gaussian(4, 4, rng), xs, ys)

    def test_scale_cancels_in_normalized_kernel(self, rng, small_sets):
        """Rescaling P by gamma leaves diag(K_hat 1)^-1 K_hat unchanged"""
        xs, ys = small_sets
        fp = build_features(Mechanism(Family.POS), sample_gaussian(8, 4, rng), xs, ys)
        scaled = FeaturePair(p=3.7 * fp.p, s=fp.s)
        k, k_scaled = approx_kernel(fp), approx_kernel(scaled)
        np.testing.assert_allclose(
            k / k.sum(axis=1, keepdims=True),
            k_scaled / k_scaled.sum(axis=1, keepdims=True),
            rtol=1e-12,
        )

    def test_orthogonal_scheme_draws(self, rng, small_sets):
        xs, ys = small_sets
        mech = Mechanism(Family.POS, scheme=DrawScheme.ORTHOGONAL)
        draws = draw_features(mech, 8, 4, rng)
        assert draws.scheme is DrawScheme.ORTHOGONAL
        assert build_features(mech, draws, xs, ys).p.shape == (xs.size, 8)

    def test_qmc_scheme_stacks_blocks(self, rng):
        corr = QmcCorrelation.uniform(-0.25, 2, 5)
        mech = Mechanism(Family.POS, scheme=DrawScheme.QMC, qmc=corr)
        draws = draw_features(mech, 12, 2, rng)
        assert draws.omegas.shape == (12, 2)
        assert draws.scheme is DrawScheme.QMC

    def test_trig_draws_carry_phases(self, rng):
        draws = draw_features(Mechanism(Family.TRIG), 5, 2, rng)
        assert draws.phases.shape == (5,)
        assert np.all((draws.phases >= 0.0) & (draws.phases < 2.0 * np.pi))


@pytest.mark.statistical
class TestUnbiasedness:
    """Seeded checks that f1 f2 averages to K within 5 standard errors"""

    @staticmethod
    def _pairs(rng, d: int, count: int = 20):
        """count (x, y) pairs with norms uniform in [0, 1]"""

        def ball(offset):
            v = rng.standard_normal((count, d)) + offset
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return PointSet(points=v * rng.uniform(0.0, 1.0, size=(count, 1)))

        return ball(0.0), ball(0.3)

    @pytest.mark.parametrize("d", [2, 4, 8])
    @pytest.mark.parametrize("name", ["trig", "pos", "ge", "sade", "aderf", "sderf"])
    def test_estimate_within_band(self, name, d):
        rng = make_rng(100 + d)
        xs, ys = self._pairs(rng, d)
        mech = {
            "trig": lambda: Mechanism(Family.TRIG),
            "pos": lambda: Mechanism(Family.POS),
            "ge": lambda: Mechanism(Family.GE, GEParams.from_a(-0.1, d)),
            "sade": lambda: Mechanism(
                Family.SADE, SADEParams(psi=np.linspace(0.7, 1.3, d), ge=GEParams.from_a(-0.1, d))
            ),
            "aderf": lambda: Mechanism(Family.DE, fit_aderf(moment_stats(xs, ys))[0]),
            "sderf": lambda: Mechanism(Family.DE, fit_sderf(moment_stats(xs, ys))[0]),
        }[name]()
        n = 100_000
        draws = draw_features(mech, n, d, rng)
        z = feature_values(mech, draws, xs, 1) * feature_values(mech, draws, ys, 2)
        mean = z.mean(axis=1)
        se = z.std(axis=1) / np.sqrt(n)
        expected = np.exp(np.einsum("ij,ij->i", xs.points, ys.points))
        assert np.all(np.abs(mean - expected) <= 5.0 * se + 1e-12)
