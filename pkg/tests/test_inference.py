import numpy as np
import pytest

from lib.transport.costs import power_cost
from lib.transport.exceptions import (
    AssumptionViolationError,
    DeltaMethodInapplicableError,
    InvalidArgumentError,
    SingularHessianError,
)
from lib.transport.measures import DiscreteMeasure, pushforward
from services.discrete_transport import extract_dual_face, solve_discrete
from services.inference import (
    GAUSSIAN,
    SUP_ABS_GAUSSIAN,
    SUP_OF_GAUSSIAN,
    LimitLaw,
    asymptotic_variance_cost,
    cost_limit_law,
    gradient_outer_A,
    hadamard_derivative,
    potentials_contrast_law,
    potentials_covariance,
    regularity_gaps,
    sigma_p,
    simulate_limit,
    sup_norm_potential_law,
    wp_limit_law,
)
from services.semidiscrete_solver import restricted_pinv, solve_exact_1d

ORACLE_P = np.array([0.25, 0.75])
ORACLE_H = np.array([[-0.5, 0.5], [0.5, -0.5]])
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
HALF_NORMAL_MEAN = np.sqrt(2.0 / np.pi) / 2.0


@pytest.fixture
def oracle_report(oracle_P, quadratic, unit_interval):
    return solve_exact_1d(oracle_P, unit_interval, quadratic)


class TestMultinomialCovariance:
    def test_matrix(self):
        assert sigma_p(ORACLE_P).matrix == pytest.approx(np.array([[0.1875, -0.1875], [-0.1875, 0.1875]]))

    def test_sample_moments(self):
        p = np.array([0.2, 0.3, 0.5])
        cov = sigma_p(p)
        X = cov.sample(200_000, np.random.default_rng(5))
        assert X.sum(axis=1) == pytest.approx(np.zeros(X.shape[0]), abs=1e-12)
        assert X.mean(axis=0) == pytest.approx(np.zeros(3), abs=5e-3)
        # four standard errors of the sample covariance
        assert np.cov(X.T) == pytest.approx(cov.matrix, abs=4e-3)


class TestCostVariance:
    def test_oracle(self, oracle_z):
        assert asymptotic_variance_cost(oracle_z, ORACLE_P) == pytest.approx(3.0 / 64.0)

    def test_quadratic_form(self):
        rng = np.random.default_rng(3)
        p = rng.dirichlet(np.ones(5))
        z = rng.standard_normal(5)
        assert asymptotic_variance_cost(z, p) == pytest.approx(z @ sigma_p(p).matrix @ z)

    def test_gauge_invariance(self, oracle_z):
        assert asymptotic_variance_cost(oracle_z + 4.2, ORACLE_P) == pytest.approx(3.0 / 64.0)

    def test_constant_potential(self):
        assert asymptotic_variance_cost([1.0, 1.0, 1.0], [0.2, 0.3, 0.5]) == pytest.approx(0.0, abs=1e-15)


class TestHadamardDerivative:
    def test_unique_potential(self, oracle_z):
        assert hadamard_derivative(oracle_z, ORACLE_P, [1.0, -1.0]) == pytest.approx(-0.5)

    def test_face(self):
        face = extract_dual_face(solve_discrete([0.5, 0.5], [0.5, 0.5], SWAP))
        assert hadamard_derivative(face, [0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5, abs=1e-9)
        assert hadamard_derivative(face, [0.5, 0.5], [0.0, 1.0]) == pytest.approx(0.5, abs=1e-9)

    def test_matches_finite_differences_of_lp_value(self):
        p, q = np.array([0.25, 0.75]), np.array([0.5, 0.5])
        sol = solve_discrete(p, q, SWAP)
        direction = np.array([1.0, -1.0])
        t = 1e-3
        up = solve_discrete(p + t * direction, q, SWAP).primal_value
        down = solve_discrete(p - t * direction, q, SWAP).primal_value
        expected = hadamard_derivative(sol.dual_u, p, direction)
        assert (up - down) / (2 * t) == pytest.approx(expected, abs=1e-8)
        assert expected == pytest.approx(-1.0, abs=1e-9)


class TestCostLimitLaw:
    def test_unique_semidiscrete(self, oracle_report, quadratic, unit_interval):
        law = cost_limit_law(oracle_report, ORACLE_P, c=quadratic, Q=unit_interval)
        assert law.kind == GAUSSIAN
        assert law.variance == pytest.approx(3.0 / 64.0)

    def test_unique_needs_metadata(self, oracle_report):
        with pytest.raises(AssumptionViolationError):
            cost_limit_law(oracle_report, ORACLE_P)

    def test_unique_needs_strict_convexity(self, oracle_report, unit_interval):
        with pytest.raises(AssumptionViolationError) as err:
            cost_limit_law(oracle_report, ORACLE_P, mode="unique", c=power_cost(1.0), Q=unit_interval)
        assert "A1" in err.value.missing

    def test_face_mode_needs_lp(self, oracle_report, quadratic, unit_interval):
        with pytest.raises(InvalidArgumentError):
            cost_limit_law(oracle_report, ORACLE_P, mode="face", c=quadratic, Q=unit_interval)

    def test_unknown_mode(self, oracle_report):
        with pytest.raises(InvalidArgumentError):
            cost_limit_law(oracle_report, ORACLE_P, mode="bootstrap")

    def test_lp_face(self):
        sol = solve_discrete([0.5, 0.5], [0.5, 0.5], SWAP)
        law = cost_limit_law(sol, [0.5, 0.5])
        assert law.kind == SUP_OF_GAUSSIAN
        assert law.face is not None and law.cov is not None

    def test_lp_unique_on_segment(self):
        sol = solve_discrete([0.5, 0.5], [0.5, 0.5], SWAP)
        with pytest.raises(AssumptionViolationError):
            cost_limit_law(sol, [0.5, 0.5], mode="unique")

    def test_lp_unique_on_singleton(self):
        sol = solve_discrete(ORACLE_P, [0.5, 0.5], SWAP)
        law = cost_limit_law(sol, ORACLE_P, mode="unique")
        assert law.kind == GAUSSIAN
        assert law.variance == pytest.approx(0.1875, abs=1e-9)

    def test_single_atom(self):
        law = cost_limit_law(solve_discrete([1.0], [0.5, 0.5], [[0.0, 1.0]]), [1.0])
        assert law.kind == GAUSSIAN and law.variance == 0.0

    def test_singleton_face_agrees_with_gaussian(self):
        # on a singleton face the sup is linear, so both laws have variance u^T Sigma u
        sol = solve_discrete(ORACLE_P, [0.5, 0.5], SWAP)
        face_law = cost_limit_law(sol, ORACLE_P, mode="face")
        gauss_law = cost_limit_law(sol, ORACLE_P, mode="unique")
        rng = np.random.default_rng(9)
        X = face_law.cov.sample(50, rng)
        draws = face_law.draw(50, np.random.default_rng(9))
        assert draws == pytest.approx(X @ sol.dual_u, abs=1e-9)
        assert sol.dual_u @ face_law.cov.matrix @ sol.dual_u == pytest.approx(gauss_law.variance, abs=1e-9)

    def test_plug_in_flag_is_carried(self, oracle_report, quadratic, unit_interval):
        law = cost_limit_law(oracle_report, ORACLE_P, c=quadratic, Q=unit_interval, plug_in=True)
        assert law.plug_in
        assert law.to_dict()["plug_in"] is True


class TestWpLaw:
    def test_gaussian_scaling(self):
        law = wp_limit_law(LimitLaw(GAUSSIAN, variance=3.0 / 64.0), 2.0, 7.0 / 48.0)
        assert law.scale_factor == pytest.approx(1.30931, abs=1e-5)
        assert law.variance == pytest.approx(0.080357, abs=1e-6)

    def test_p_one_is_identity(self):
        law = wp_limit_law(LimitLaw(GAUSSIAN, variance=0.3), 1.0, 0.25)
        assert law.variance == pytest.approx(0.3)

    def test_sup_law_scales_draws(self):
        sol = solve_discrete([0.5, 0.5], [0.5, 0.5], SWAP)
        base = cost_limit_law(sol, [0.5, 0.5])
        law = wp_limit_law(base, 2.0, 0.16)
        assert law.kind == SUP_OF_GAUSSIAN
        assert law.scale_factor == pytest.approx(1.25)
        scaled = law.draw(20, np.random.default_rng(2))
        assert scaled == pytest.approx(base.draw(20, np.random.default_rng(2)) * law.scale_factor)

    def test_zero_cost(self):
        with pytest.raises(DeltaMethodInapplicableError):
            wp_limit_law(LimitLaw(GAUSSIAN, variance=0.1), 2.0, 0.0)

    def test_exponent_below_one(self):
        with pytest.raises(InvalidArgumentError):
            wp_limit_law(LimitLaw(GAUSSIAN, variance=0.1), 0.5, 0.2)


class TestPotentialsCovariance:
    def test_oracle_contrast(self):
        cov = potentials_covariance(ORACLE_H, ORACLE_P, ORACLE_P)
        assert cov.contrast_variance(0, 1) == pytest.approx(0.75)
        assert cov.matrix @ np.ones(2) == pytest.approx(np.zeros(2), abs=1e-12)
        law = potentials_contrast_law(cov, 0, 1)
        assert law.kind == GAUSSIAN and law.variance == pytest.approx(0.75)

    def test_A_at_optimum_is_sigma(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        assert gradient_outer_A(p) == pytest.approx(sigma_p(p).matrix)
        assert gradient_outer_A(p, p) == pytest.approx(sigma_p(p).matrix)

    def test_singular(self):
        with pytest.raises(SingularHessianError):
            potentials_covariance(np.zeros((2, 2)), ORACLE_P)

    def test_single_atom(self):
        cov = potentials_covariance(np.zeros((1, 1)), [1.0])
        assert cov.matrix == pytest.approx(np.zeros((1, 1)))

    def test_linearized_slope(self, quadratic, unit_interval):
        P = DiscreteMeasure(points=[0.1, 0.5, 0.8], weights=[0.3, 0.3, 0.4])
        report = solve_exact_1d(P, unit_interval, quadratic)
        H_pinv, _ = restricted_pinv(report.hessian)
        direction = np.array([1.0, -0.5, -0.5])
        t = 1e-5
        up = solve_exact_1d(P.with_weights(P.weights + t * direction), unit_interval, quadratic)
        down = solve_exact_1d(P.with_weights(P.weights - t * direction), unit_interval, quadratic)
        slope = (up.potentials.values - down.potentials.values) / (2 * t)
        assert slope == pytest.approx(-H_pinv @ direction, abs=1e-5)

    def test_sup_norm_law_mean(self):
        cov = potentials_covariance(ORACLE_H, ORACLE_P, ORACLE_P)
        law = sup_norm_potential_law(cov)
        assert law.kind == SUP_ABS_GAUSSIAN
        sample = simulate_limit(law, 100_000, seed=21)
        assert sample.min() >= 0.0
        assert sample.mean() == pytest.approx(np.sqrt(0.75) * np.sqrt(2.0 / np.pi) / 2.0, abs=5e-3)
        assert sample.mean() == pytest.approx(0.3455, abs=5e-3)


class TestSimulateLimit:
    def test_gaussian_variance(self):
        sample = simulate_limit(LimitLaw(GAUSSIAN, variance=3.0 / 64.0), 100_000, seed=1)
        assert sample.shape == (100_000,)
        assert sample.var() == pytest.approx(3.0 / 64.0, rel=0.02)

    def test_independent_of_worker_count(self):
        law = LimitLaw(GAUSSIAN, variance=0.5)
        one = simulate_limit(law, 25_000, seed=4, workers=1)
        many = simulate_limit(law, 25_000, seed=4, workers=4)
        assert np.array_equal(one, many)

    def test_seeds_differ(self):
        law = LimitLaw(GAUSSIAN, variance=0.5)
        assert not np.array_equal(simulate_limit(law, 100, seed=1), simulate_limit(law, 100, seed=2))

    def test_half_normal_sup_of_gaussian(self):
        sol = solve_discrete([0.5, 0.5], [0.5, 0.5], SWAP)
        sample = simulate_limit(cost_limit_law(sol, [0.5, 0.5]), 4000, seed=33)
        assert sample.min() >= -1e-9
        assert sample.mean() == pytest.approx(HALF_NORMAL_MEAN, abs=0.02)

    def test_needs_draws(self):
        with pytest.raises(InvalidArgumentError):
            simulate_limit(LimitLaw(GAUSSIAN, variance=1.0), 0)


class TestLimitLaw:
    @pytest.mark.parametrize("kwargs", [
        {"kind": "student"},
        {"kind": GAUSSIAN, "variance": -1.0},
        {"kind": GAUSSIAN, "variance": 1.0, "scale_factor": 0.0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            LimitLaw(**kwargs)

    def test_to_dict(self):
        data = LimitLaw(GAUSSIAN, variance=0.25).to_dict()
        assert data == {"kind": GAUSSIAN, "scale_factor": 1.0, "plug_in": False, "variance": 0.25}


def test_regularity_gaps(quadratic, unit_interval):
    assert regularity_gaps(quadratic, unit_interval) == []
    assert regularity_gaps(power_cost(3.0), unit_interval) == ["REG", "TWIST", "QC"]
    assert regularity_gaps(quadratic, pushforward(unit_interval, "square")) == ["HOL"]
