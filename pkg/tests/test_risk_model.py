"""
Tests for risk_model.py - precision, Laplacian, critical margin and risk functions

Property tests (hypothesis) draw random positive-definite precision matrices from
a seed, so every example is reproducible from the printed seed.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

SEEDS = st.integers(min_value=0, max_value=2**32 - 1)
SIZES = st.integers(min_value=2, max_value=7)


def random_precision(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n + 2))
    return a @ a.T / (n + 2) + 0.1 * np.eye(n)


def random_instance(n, seed, ratio=0.5):
    from risk_model import critical_margin, ising_from_field, laplacian
    Cinv = random_precision(n, seed)
    h = np.random.default_rng(seed + 1).uniform(-1.0, 1.0, size=n)
    gamma_c = critical_margin(laplacian(Cinv))
    return ising_from_field(Cinv, h, ratio * gamma_c)


def all_spins(n):
    return [np.array([1.0 if (k >> b) & 1 else -1.0 for b in range(n)]) for k in range(2 ** n)]


class TestCovariance:
    """Test covariance estimation and inversion"""

    def test_constant_column_is_flagged_singular(self):
        """Test that a zero-variance asset marks the estimate singular"""
        from market_data import ReturnMatrix
        from risk_model import estimate_covariance
        data = np.column_stack([np.random.default_rng(0).standard_normal(50), np.zeros(50)])
        estimate = estimate_covariance(ReturnMatrix(data, "log"))
        assert estimate.singular

    def test_well_conditioned_estimate(self):
        """Test that independent columns give a non-singular estimate"""
        from market_data import ReturnMatrix
        from risk_model import estimate_covariance
        data = np.random.default_rng(1).standard_normal((500, 3))
        estimate = estimate_covariance(ReturnMatrix(data, "log"))
        assert not estimate.singular
        assert estimate.C.shape == (3, 3)
        assert estimate.condition_number >= 1.0

    def test_singular_inversion_raises(self):
        """Test that inverting a rank-deficient covariance without shrinkage fails"""
        from risk_model import SingularCovarianceError, invert_covariance
        with pytest.raises(SingularCovarianceError, match="shrinkage"):
            invert_covariance(np.ones((2, 2)))

    def test_shrinkage_rescues_singular_covariance(self):
        """Test that shrinkage toward the scaled identity makes C invertible"""
        from risk_model import invert_covariance
        Cinv = invert_covariance(np.ones((2, 2)), shrinkage=0.1)
        shrunk = 0.9 * np.ones((2, 2)) + 0.1 * np.eye(2)
        np.testing.assert_allclose(Cinv @ shrunk, np.eye(2), atol=1e-10)

    def test_ill_conditioned_inversion_raises(self):
        """Test that a positive-definite C above the condition limit needs shrinkage"""
        from risk_model import SingularCovarianceError, invert_covariance
        with pytest.raises(SingularCovarianceError, match="condition number"):
            invert_covariance(np.diag([1.0, 1e-14]))

    def test_condition_limit_is_configurable(self, monkeypatch):
        """Test that MARGIN_CONDITION_LIMIT lowers the rejection threshold"""
        from risk_model import SingularCovarianceError, invert_covariance
        monkeypatch.setenv("MARGIN_CONDITION_LIMIT", "10")
        with pytest.raises(SingularCovarianceError, match="condition number"):
            invert_covariance(np.diag([1.0, 0.01]))
        Cinv = invert_covariance(np.diag([1.0, 0.01]), shrinkage=0.5)
        assert np.all(np.isfinite(Cinv))

    def test_wishart_inverse_multiplies_back_to_identity(self):
        """Test that C^-1 C = I for a sample covariance of 40 draws in 8 dimensions"""
        from risk_model import invert_covariance
        draws = np.random.default_rng(8).standard_normal((40, 8))
        C = draws.T @ draws / 40
        np.testing.assert_allclose(invert_covariance(C) @ C, np.eye(8), atol=1e-8)

    def test_shrinkage_out_of_range_raises(self):
        """Test that lambda must lie in [0, 1)"""
        from risk_model import invert_covariance
        with pytest.raises(ValueError):
            invert_covariance(np.eye(2), shrinkage=1.0)

    def test_asymmetric_covariance_raises(self):
        """Test that a non-symmetric matrix is rejected"""
        from risk_model import invert_covariance
        with pytest.raises(ValueError, match="symmetric"):
            invert_covariance(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestCriticalMargin:
    """Test the Laplacian and gamma_c"""

    def test_two_asset_example(self):
        """Test that C^-1 = [[2,-1],[-1,2]] gives gamma_c = 0.5"""
        from risk_model import critical_margin, hessian_critical_margin, laplacian
        Delta = laplacian(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        np.testing.assert_allclose(Delta, [[-1.0, 1.0], [1.0, -1.0]])
        assert critical_margin(Delta) == 0.5
        assert hessian_critical_margin(Delta) == pytest.approx(0.5)

    def test_diagonal_precision_gives_infinite_margin(self):
        """Test that uncorrelated assets have Delta = 0 and gamma_c = inf"""
        from risk_model import critical_margin, laplacian
        Delta = laplacian(np.diag([1.0, 2.0, 3.0]))
        assert np.all(Delta == 0.0)
        assert math.isinf(critical_margin(Delta))

    def test_negative_gamma_rejected(self):
        """Test that the Hessian check rejects gamma < 0"""
        from risk_model import hessian_min_eigenvalue
        with pytest.raises(ValueError):
            hessian_min_eigenvalue(np.zeros((2, 2)), -0.1)

    @settings(max_examples=60, deadline=None)
    @given(n=SIZES, seed=SEEDS)
    def test_laplacian_rows_sum_to_zero(self, n, seed):
        """Test that the all-ones vector is in the kernel of Delta"""
        from risk_model import laplacian
        Delta = laplacian(random_precision(n, seed))
        np.testing.assert_allclose(Delta.sum(axis=1), 0.0, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(n=SIZES, seed=SEEDS, ratio=st.floats(min_value=0.0, max_value=0.999))
    def test_hessian_positive_definite_below_gamma_c(self, n, seed, ratio):
        """Test that I + gamma Delta is PD for every gamma < gamma_c"""
        from risk_model import critical_margin, hessian_min_eigenvalue, laplacian
        Delta = laplacian(random_precision(n, seed))
        gamma_c = critical_margin(Delta)
        assert hessian_min_eigenvalue(Delta, ratio * gamma_c) > 0.0

    @settings(max_examples=60, deadline=None)
    @given(n=SIZES, seed=SEEDS)
    def test_exact_boundary_never_below_gershgorin_bound(self, n, seed):
        """Test that the exact Hessian boundary is at least gamma_c"""
        from risk_model import critical_margin, hessian_critical_margin, laplacian
        Delta = laplacian(random_precision(n, seed))
        assert hessian_critical_margin(Delta) >= critical_margin(Delta) * (1 - 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(n=SIZES, seed=SEEDS, scale=st.floats(min_value=0.01, max_value=100.0))
    def test_gamma_c_scales_with_covariance(self, n, seed, scale):
        """Test that scaling C by k scales gamma_c by k"""
        from risk_model import critical_margin, laplacian
        Cinv = random_precision(n, seed)
        base = critical_margin(laplacian(Cinv))
        scaled = critical_margin(laplacian(Cinv / scale))
        assert scaled == pytest.approx(base * scale, rel=1e-9)


class TestIsingMapping:
    """Test build_ising and the spin/convex risk functions"""

    def test_couplings_and_field(self):
        """Test that J = gamma C^-1 and h = C^-1 r"""
        from risk_model import build_ising
        Cinv = np.array([[2.0, -1.0], [-1.0, 2.0]])
        inst = build_ising(Cinv, [1.0, 0.0], 0.25)
        np.testing.assert_allclose(inst.J, 0.25 * Cinv)
        np.testing.assert_allclose(inst.h, [2.0, -1.0])
        assert inst.gamma_c == 0.5
        assert inst.gamma_ratio == 0.5
        assert inst.is_convex

    def test_instance_arrays_are_read_only(self):
        """Test that an IsingInstance cannot be mutated in place"""
        from risk_model import build_ising
        inst = build_ising(np.eye(2), [1.0, 1.0], 0.1)
        with pytest.raises(ValueError):
            inst.J[0, 0] = 5.0

    def test_wrong_return_length_raises(self):
        """Test that r must match the precision size"""
        from risk_model import build_ising
        with pytest.raises(ValueError):
            build_ising(np.eye(2), [1.0, 2.0, 3.0], 0.1)

    def test_negative_gamma_raises(self):
        """Test that a negative margin is rejected"""
        from risk_model import build_ising
        with pytest.raises(ValueError):
            build_ising(np.eye(2), [1.0, 2.0], -1.0)

    def test_implied_returns_reproduce_field(self):
        """Test that r = C h maps back to h"""
        from risk_model import build_ising, implied_returns
        Cinv = random_precision(4, 3)
        C = np.linalg.inv(Cinv)
        h = np.array([0.3, -0.2, 0.9, -1.0])
        inst = build_ising(Cinv, implied_returns(C, h), 0.1)
        np.testing.assert_allclose(inst.h, h, atol=1e-10)

    def test_spin_config_rejects_non_spins(self):
        """Test that SpinConfig only accepts -1/+1"""
        from risk_model import SpinConfig
        with pytest.raises(ValueError):
            SpinConfig(np.array([1.0, 0.0]), 0.0)

    def test_flip_delta_out_of_range(self):
        """Test that flipping a missing site raises IndexError"""
        from risk_model import flip_delta
        inst = random_instance(3, 0)
        with pytest.raises(IndexError):
            flip_delta(inst, np.ones(3), 3)

    @settings(max_examples=50, deadline=None)
    @given(n=SIZES, seed=SEEDS, ratio=st.floats(min_value=0.0, max_value=5.0))
    def test_flip_delta_matches_direct_difference(self, n, seed, ratio):
        """Test that flip_delta equals R(flipped) - R(s) for every site"""
        from risk_model import flip_delta, flip_deltas, spin_risk
        inst = random_instance(n, seed, ratio)
        s = np.where(np.random.default_rng(seed + 2).random(n) < 0.5, -1.0, 1.0)
        deltas = flip_deltas(inst, s)
        for i in range(n):
            flipped = s.copy()
            flipped[i] = -flipped[i]
            direct = spin_risk(inst, flipped) - spin_risk(inst, s)
            assert flip_delta(inst, s, i) == pytest.approx(direct, abs=1e-9)
            assert deltas[i] == pytest.approx(direct, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(n=SIZES, seed=SEEDS, ratio=st.floats(min_value=0.0, max_value=5.0))
    def test_convex_flip_is_twice_spin_flip(self, n, seed, ratio):
        """Test that on spins, a flip changes R_c by exactly twice the change in R"""
        from risk_model import convex_risk, spin_risk
        inst = random_instance(n, seed, ratio)
        s = np.where(np.random.default_rng(seed + 3).random(n) < 0.5, -1.0, 1.0)
        for i in range(n):
            flipped = s.copy()
            flipped[i] = -flipped[i]
            d_convex = convex_risk(inst, flipped) - convex_risk(inst, s)
            d_spin = spin_risk(inst, flipped) - spin_risk(inst, s)
            assert d_convex == pytest.approx(2.0 * d_spin, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(n=SIZES, seed=SEEDS)
    def test_pairwise_form_matches_matrix_form(self, n, seed):
        """Test that the pair-sum surrogate equals the Laplacian form for real vectors"""
        from risk_model import convex_risk, convex_risk_pairwise
        inst = random_instance(n, seed, 0.7)
        x = np.random.default_rng(seed + 4).uniform(-2.0, 2.0, size=n)
        assert convex_risk_pairwise(inst, x) == pytest.approx(convex_risk(inst, x), rel=1e-9, abs=1e-9)

    def test_surrogate_and_spin_risk_share_minimiser(self):
        """Test that R_c and R order all spin states identically"""
        from risk_model import convex_risk, spin_risk
        inst = random_instance(5, 11, 2.0)
        states = all_spins(5)
        spin_order = np.argsort([spin_risk(inst, s) for s in states], kind="stable")
        convex_values = np.array([convex_risk(inst, s) for s in states])
        assert np.all(np.diff(convex_values[spin_order]) >= -1e-9)


class TestPositions:
    """Test the position-space side of the mapping"""

    def test_zero_margin_identity_covariance(self):
        """Test that gamma = 0 and C = I give p = r"""
        from risk_model import optimal_positions
        r = np.array([0.2, -0.1, 0.4])
        p = optimal_positions(np.eye(3), r, 0.0, np.sign(r))
        np.testing.assert_allclose(p.p, r)
        assert np.all(p.sign_consistency(np.sign(r)))

    def test_sign_consistency_flags_disagreement(self):
        """Test that a position opposing its spin is flagged"""
        from risk_model import PositionVector
        flags = PositionVector(np.array([0.5, -0.5, 0.0])).sign_consistency([1.0, 1.0, -1.0])
        assert flags.tolist() == [True, False, False]

    @settings(max_examples=40, deadline=None)
    @given(n=SIZES, seed=SEEDS, gamma=st.floats(min_value=0.0, max_value=3.0))
    def test_position_risk_reduces_to_spin_risk(self, n, seed, gamma):
        """Test that R(p*(s)) = gamma R(s) - 1/2 r'C^-1 r for every spin state"""
        from risk_model import (
            build_ising,
            optimal_positions,
            portfolio_risk,
            position_risk_offset,
            spin_risk,
        )
        Cinv = random_precision(n, seed)
        C = np.linalg.inv(Cinv)
        C = 0.5 * (C + C.T)
        r = np.random.default_rng(seed + 5).normal(0.0, 0.5, size=n)
        inst = build_ising(Cinv, r, gamma)
        s = np.where(np.random.default_rng(seed + 6).random(n) < 0.5, -1.0, 1.0)
        p = optimal_positions(Cinv, r, gamma, s)
        expected = gamma * spin_risk(inst, s) + position_risk_offset(Cinv, r)
        assert portfolio_risk(C, r, gamma, p, s) == pytest.approx(expected, rel=1e-7, abs=1e-7)

    def test_positions_are_stationary(self):
        """Test that C p - r - gamma s vanishes at the optimal positions on 100 instances"""
        from risk_model import optimal_positions
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            n = int(rng.integers(2, 9))
            Cinv = random_precision(n, seed)
            C = np.linalg.inv(Cinv)
            r = rng.normal(0.0, 0.5, size=n)
            gamma = float(rng.uniform(0.0, 3.0))
            s = rng.choice([-1.0, 1.0], size=n)
            p = optimal_positions(Cinv, r, gamma, s).p
            worst = max(worst, float(np.max(np.abs(C @ p - r - gamma * s))))
        assert worst < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(n=SIZES, seed=SEEDS, gamma=st.floats(min_value=0.0, max_value=3.0))
    def test_optimal_positions_minimize_risk_for_fixed_spins(self, n, seed, gamma):
        """Test that random perturbations of the optimal positions never lower the risk"""
        from risk_model import optimal_positions, portfolio_risk
        Cinv = random_precision(n, seed)
        C = np.linalg.inv(Cinv)
        C = 0.5 * (C + C.T)
        rng = np.random.default_rng(seed + 7)
        r = rng.normal(0.0, 0.5, size=n)
        s = rng.choice([-1.0, 1.0], size=n)
        p = optimal_positions(Cinv, r, gamma, s).p
        best = portfolio_risk(C, r, gamma, p, s)
        for eps in (1e-3, 1e-1, 1.0):
            for _ in range(10):
                moved = p + eps * rng.standard_normal(n)
                assert portfolio_risk(C, r, gamma, moved, s) >= best - 1e-10


class TestPortfolioProblem:
    """Test the portfolio container that feeds the optimize pipeline"""

    def test_ising_matches_build_ising(self):
        """Test that to_ising gives J = gamma C^-1 and h = C^-1 r"""
        from risk_model import PortfolioProblem
        Cinv = np.array([[2.0, -1.0], [-1.0, 2.0]])
        problem = PortfolioProblem(np.linalg.inv(Cinv), Cinv, np.array([1.0, 0.0]), 0.25)
        inst = problem.to_ising()
        np.testing.assert_allclose(inst.J, 0.25 * Cinv)
        np.testing.assert_allclose(inst.h, [2.0, -1.0])
        assert inst.gamma_c == 0.5

    def test_expected_return_of_positions(self):
        """Test r_p = sum r_i p_i, for arrays and PositionVector alike"""
        from risk_model import PortfolioProblem
        problem = PortfolioProblem(np.eye(3), np.eye(3), np.array([0.2, -0.1, 0.4]), 0.0)
        positions = problem.positions([1.0, -1.0, 1.0])
        assert problem.expected_return(positions) == pytest.approx(0.21)
        assert problem.expected_return([1.0, 1.0, 1.0]) == pytest.approx(0.5)

    def test_risk_at_positions_matches_reduction(self):
        """Test that risk(positions(s), s) = gamma R(s) + risk_offset"""
        from risk_model import PortfolioProblem, spin_risk
        Cinv = random_precision(4, 3)
        C = np.linalg.inv(Cinv)
        problem = PortfolioProblem(0.5 * (C + C.T), Cinv, np.array([0.3, -0.2, 0.1, 0.05]), 0.7)
        s = np.array([1.0, -1.0, -1.0, 1.0])
        expected = 0.7 * spin_risk(problem.to_ising(), s) + problem.risk_offset
        assert problem.risk(problem.positions(s), s) == pytest.approx(expected, rel=1e-9)

    def test_arrays_are_read_only(self):
        """Test that the stored arrays cannot be modified"""
        from risk_model import PortfolioProblem
        problem = PortfolioProblem(np.eye(2), np.eye(2), np.zeros(2), 0.1)
        with pytest.raises(ValueError):
            problem.r[0] = 1.0

    def test_negative_gamma_raises(self):
        """Test the gamma >= 0 guard"""
        from risk_model import PortfolioProblem
        with pytest.raises(ValueError):
            PortfolioProblem(np.eye(2), np.eye(2), np.zeros(2), -0.5)
