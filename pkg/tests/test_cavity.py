import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from multibethe.cavity import (Monotonicity, boundary_vector, cavity_bounds,
                               check_condition_h_big, check_condition_h_small,
                               concavity_probe, f_beta, fixed_point_nonneg,
                               fixed_point_zero_field_positive, high_temp_contraction_check,
                               iterate, recursion_step, solve, strict_increase_witness,
                               trajectory)
from multibethe.errors import RegimeError, StructuralError
from multibethe.model import ModelSpec, class_edge_set, figure_one_spec, random_spec, regular_spec
from multibethe.spectral import build_M, perron_vector, spectral_radius
from oracles import scalar_bisection

# 40-digit evaluations (mpmath) of quantities used below
F_1_1 = 0.6625013736789322154688755984147886583433
ZBAR_K3 = 0.1643037578121700965877129448280883843471   # k=3, beta=0.2, h=0.1
ZPLUS_K3_08 = 1.303292127352148477317406460697121242804  # k=3, beta=0.8, h=0


class TestFBeta:
    def test_infinite_argument(self):
        assert f_beta(0.5, math.inf) == 0.5
        assert f_beta(0.5, -math.inf) == -0.5

    def test_zero(self):
        for b in (0.0, 0.3, 5.0):
            assert f_beta(b, 0.0) == 0.0

    def test_reference_value(self):
        assert f_beta(1.0, 1.0) == pytest.approx(F_1_1, abs=1e-15)

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            f_beta(-0.1, 1.0)

    def test_vectorised(self):
        out = f_beta(np.array([0.2, 0.5]), np.array([[1.0], [-math.inf]]))
        assert out.shape == (2, 2)
        assert out[1].tolist() == [-0.2, -0.5]

    @given(st.floats(0, 30), st.floats(-50, 50))
    def test_odd_and_bounded(self, b, x):
        y = f_beta(b, x)
        assert f_beta(b, -x) == -y
        # a few ulps of slack relative to the bound
        assert abs(y) <= min(b, abs(x)) * (1 + 4e-16)

    @given(st.floats(0.01, 3), st.floats(-5, 5))
    def test_against_mpmath(self, b, x):
        mpmath.mp.dps = 30
        ref = mpmath.atanh(mpmath.tanh(b) * mpmath.tanh(x))
        assert f_beta(b, x) == pytest.approx(float(ref), rel=1e-12, abs=1e-300)

    def test_saturated_regime(self):
        # tanh(40)^2 rounds to 1 in double precision
        mpmath.mp.dps = 80
        ref = float(mpmath.atanh(mpmath.tanh(40) ** 2))
        assert f_beta(40.0, 40.0) == pytest.approx(ref, rel=1e-14)


class TestRecursionStep:
    def test_zero_is_fixed_at_zero_field(self):
        s = figure_one_spec(h=0.0)
        assert np.all(recursion_step(s, 0.0) == 0)

    def test_single_class_values(self):
        s = regular_spec(3, beta=0.2, h=0.1)
        assert recursion_step(s, 0.0)[0] == pytest.approx(0.1)
        assert recursion_step(s, math.inf)[0] == pytest.approx(0.5)

    def test_wrong_length(self):
        with pytest.raises(StructuralError):
            recursion_step(figure_one_spec(), np.zeros(3))

    @given(st.integers(0, 10_000), st.floats(-5, 5))
    def test_bounds_after_one_step(self, seed, x):
        s = random_spec(np.random.default_rng(seed), h_range=(-1, 1))
        lo, hi = cavity_bounds(s)
        for z0 in (x, math.inf, -math.inf):
            z = recursion_step(s, z0)
            assert np.all(np.isfinite(z))
            assert np.all(z >= lo - 1e-12) and np.all(z <= hi + 1e-12)

    @given(st.integers(0, 10_000))
    def test_odd_at_zero_field(self, seed):
        rng = np.random.default_rng(seed)
        s = random_spec(rng, h_range=(0, 0))
        z = rng.normal(size=len(class_edge_set(s)))
        np.testing.assert_allclose(recursion_step(s, -z), -recursion_step(s, z), atol=1e-14)

    @given(st.integers(0, 10_000))
    def test_monotone_in_boundary(self, seed):
        rng = np.random.default_rng(seed)
        s = random_spec(rng, h_range=(-1, 1))
        m = len(class_edge_set(s))
        a = rng.normal(size=m)
        b = a + rng.exponential(size=m)
        ta, tb = trajectory(s, a, 6), trajectory(s, b, 6)
        assert np.all(ta <= tb + 1e-12)


class TestIterate:
    def test_scalar_fixed_point(self):
        s = regular_spec(3, beta=0.2, h=0.1)
        res = iterate(s, 0.0, tol=1e-12)
        oracle = scalar_bisection(0.2, 0.1, 3, 0.0, 1.0)
        assert oracle == pytest.approx(ZBAR_K3, abs=1e-14)
        assert res.converged and res.residual <= 1e-12
        assert res.z[0] == pytest.approx(oracle, abs=1e-11)

    def test_monotonicity_witness(self):
        s = figure_one_spec(h=[0.1, 0.0, 0.2])
        assert iterate(s, 0.0).monotonicity_witness is Monotonicity.NONDECREASING
        assert iterate(s, math.inf).monotonicity_witness is Monotonicity.NONINCREASING

    def test_invalid_tol(self):
        with pytest.raises(ValueError):
            iterate(regular_spec(3), 0.0, tol=0.0)

    def test_non_convergence_is_reported(self):
        res = iterate(regular_spec(3, beta=0.5493, h=0.0), 1.0, tol=1e-14, max_iter=50)
        assert not res.converged and res.iterations == 50
        assert res.extrapolated is not None

    def test_serialises(self):
        d = iterate(regular_spec(3, 0.2, 0.1)).to_dict()
        assert d["pairs"] == [[0, 0]] and d["converged"]


class TestNonnegative:
    def test_scalar(self):
        res = fixed_point_nonneg(regular_spec(3, beta=0.2, h=0.1))
        assert res.z[0] == pytest.approx(ZBAR_K3, abs=1e-11)
        assert res.gap <= 1e-11

    def test_figure_one_limits_agree(self):
        s = figure_one_spec(beta=0.3, h=0.1)
        lo = iterate(s, 0.0, tol=1e-13).z
        hi = iterate(s, math.inf, tol=1e-13).z
        assert np.max(np.abs(lo - hi)) <= 1e-10
        res = fixed_point_nonneg(s)
        assert np.all(res.z >= np.array(s.h)[class_edge_set(s).source])

    def test_small_beta_tends_to_field(self):
        s = figure_one_spec(beta=1e-9, h=[0.1, 0.2, 0.3])
        res = fixed_point_nonneg(s)
        np.testing.assert_allclose(res.z, np.array(s.h)[class_edge_set(s).source], atol=1e-8)

    def test_regime_errors(self):
        with pytest.raises(RegimeError):
            fixed_point_nonneg(regular_spec(3, 0.3, 0.0))
        with pytest.raises(RegimeError):
            fixed_point_nonneg(regular_spec(3, 0.3, -0.1))
        one = ModelSpec(2, [[0, 1], [1, 0]], ["1/2", "1/2"], 0.3, [0.1, 0.0])
        with pytest.raises(RegimeError):
            fixed_point_nonneg(one)

    @given(st.integers(0, 10_000))
    def test_residual_at_returned_point(self, seed):
        s = random_spec(np.random.default_rng(seed), h_range=(0.05, 1))
        res = fixed_point_nonneg(s)
        assert np.max(np.abs(recursion_step(s, res.z) - res.z)) <= 1e-11


class TestZeroField:
    def test_supercritical_scalar(self):
        res = fixed_point_zero_field_positive(regular_spec(3, beta=0.8))
        oracle = scalar_bisection(0.8, 0.0, 3, 1e-6, 1.6)
        assert oracle == pytest.approx(ZPLUS_K3_08, abs=1e-13)
        assert res.regime == "positive"
        assert res.z[0] == pytest.approx(oracle, abs=1e-10)
        # the mirror image is also a fixed point
        assert recursion_step(regular_spec(3, beta=0.8), -res.z)[0] == pytest.approx(-res.z[0])

    def test_subcritical(self):
        res = fixed_point_zero_field_positive(regular_spec(3, beta=0.4))
        assert res.regime == "zero" and np.all(res.z == 0)
        assert res.rho == pytest.approx(2 * math.tanh(0.4))

    def test_critical_window(self):
        res = fixed_point_zero_field_positive(regular_spec(3, beta=math.atanh(0.5)))
        assert res.regime == "critical"

    def test_simply_cyclic_rejected(self):
        tri = ModelSpec(3, [[0, 1, 1], [1, 0, 1], [1, 1, 0]], ["1/3"] * 3, 0.9, 0.0)
        with pytest.raises(RegimeError):
            fixed_point_zero_field_positive(tri)

    def test_figure_one_positive(self):
        s = figure_one_spec(beta=0.9, h=0.0)
        res = fixed_point_zero_field_positive(s)
        assert res.regime == "positive" and np.all(res.z > 0)


class TestConditions:
    def test_zero_boundary_with_nonneg_field(self):
        assert check_condition_h_small(figure_one_spec(h=0.2), 0.0).holds

    def test_minus_infinity_always(self):
        s = random_spec(np.random.default_rng(3), h_range=(-1, 1))
        assert check_condition_h_small(s, -math.inf).holds
        assert check_condition_h_big(s, math.inf).holds

    def test_eps_perron(self):
        s = figure_one_spec(beta=0.9, h=0.0)
        v = perron_vector(build_M(s))
        assert check_condition_h_small(s, 1e-6 * v).holds_strictly

    def test_large_finite_upper(self):
        s = figure_one_spec(beta=0.4, h=0.1)
        _, hi = cavity_bounds(s)
        assert check_condition_h_big(s, hi + 1.0).holds

    def test_minus_infinity_upper_fails(self):
        assert not check_condition_h_big(regular_spec(3, 0.2, 0.1), -math.inf).holds

    def test_witness(self):
        s = figure_one_spec(beta=0.3, h=[0.0, 0.0, 0.1])
        w = strict_increase_witness(s, 0.0, s_max=20)
        assert all(v is not None for v in w.values())


class TestConcavity:
    def test_positive_field(self):
        s = figure_one_spec(beta=0.4, h=0.2)
        for j in range(len(class_edge_set(s))):
            assert concavity_probe(s, 0.0, j).max <= 1e-8

    def test_step_zero_is_affine(self):
        t = concavity_probe(regular_spec(3, 0.3, 0.1), 0.0, 0)
        assert np.all(np.abs(t.values[:, 0]) <= 1e-9)

    def test_degree_one_component_is_flat(self):
        s = ModelSpec(2, [[0, 1], [1, 2]], ["1/2", "1/2"], 0.4, 0.2)
        t = concavity_probe(s, 0.0, (1, 0))
        i = class_edge_set(s).index[(0, 1)]
        assert np.all(t.values[:, 1:, i] == 0)

    def test_precondition(self):
        with pytest.raises(RegimeError):
            concavity_probe(regular_spec(3, 0.3, 0.1), -1.0, 0)


class TestHighTemperature:
    def test_scalar(self):
        rep = high_temp_contraction_check(regular_spec(3, beta=0.1, h=0.3))
        assert rep.rho == pytest.approx(2 * math.tanh(0.1))
        assert rep.unique

    def test_mixed_fields(self):
        s = ModelSpec(2, [[1, 2], [2, 1]], ["1/2", "1/2"], 0.15, [0.3, -0.2])
        rep = high_temp_contraction_check(s)
        assert rep.rho < 1 and rep.unique and np.max(np.abs(rep.gap)) <= 1e-10

    def test_zero_beta(self):
        s = figure_one_spec(beta=0.0, h=[0.3, -0.1, 0.2])
        rep = high_temp_contraction_check(s)
        assert rep.rho == 0 and rep.unique
        np.testing.assert_allclose(rep.zbar, np.array(s.h)[class_edge_set(s).source])

    def test_low_temperature_not_unique(self):
        rep = high_temp_contraction_check(regular_spec(3, beta=0.9, h=-0.1))
        assert not rep.unique

    def test_geometric_decay(self):
        s = figure_one_spec(beta=0.2, h=[0.2, -0.3, 0.1])
        lo = trajectory(s, -math.inf, 40)
        hi = trajectory(s, math.inf, 40)
        gap = np.max(hi - lo, axis=1)[1:]
        rho = spectral_radius(build_M(s))
        # eventual decay no slower than rho plus a little slack
        assert gap[-1] <= gap[10] * (rho + 0.05) ** 29


def test_solve_dispatch():
    assert solve(regular_spec(3, 0.2, 0.1)).regime == "positive-field"
    assert solve(regular_spec(3, 0.8, 0.0)).regime == "positive"
    assert solve(regular_spec(3, 0.1, -0.2)).regime == "high-temperature"
    with pytest.raises(RegimeError):
        solve(regular_spec(3, 0.9, -0.2))


def test_boundary_vector_validation():
    s = figure_one_spec()
    assert boundary_vector(s, 1.0).shape == (6,)
    with pytest.raises(StructuralError):
        boundary_vector(s, [np.nan] * 6)


@given(st.integers(0, 10_000))
def test_squeeze_trajectories_monotone(seed):
    s = random_spec(np.random.default_rng(seed), min_degree=2, h_range=(0.0, 1.0))
    assume(any(x > 0 for x in s.h))
    lo = trajectory(s, 0.0, 15)
    hi = trajectory(s, math.inf, 15)
    assert np.all(np.diff(lo, axis=0) >= -1e-13)
    assert np.all(np.diff(hi[1:], axis=0) <= 1e-13)
    assert np.all(lo <= hi + 1e-13)
