import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multibethe.cavity import fixed_point_nonneg, solve
from multibethe.errors import CriticalPointError, RegimeError, StructuralError
from multibethe.graphgen import edge_type_counts, generate
from multibethe.model import ModelSpec, class_edge_set, figure_one_spec, random_spec, regular_spec
from multibethe.observables import (averages, bethe_pressure, edge_correlation, edge_weight,
                                    free_pressure, magnetization, pressure_beta_derivative,
                                    regime_of, report, solve_and_report,
                                    spontaneous_magnetization)

# 40-digit values for k=3, beta=0.2, h=0.1 (mpmath, independent of the package)
M_K3 = 0.1939666644448761527783385524368590090177
GAMMA_K3 = 0.2227268110388601240252318589749110023969
P_K3 = 0.7327431916311431371255427813053317796053
S_K3_08 = 0.9607016978672058502990451671140113488934


def two_spin_correlation(beta, z1, z2):
    num = den = 0.0
    for s1, s2 in itertools.product((-1, 1), repeat=2):
        w = math.exp(beta * s1 * s2 + z1 * s1 + z2 * s2)
        num += s1 * s2 * w
        den += w
    return num / den


class TestMagnetization:
    def test_zero_beta(self):
        s = figure_one_spec(beta=0.0, h=[0.1, -0.2, 0.3])
        z = solve(s).z
        for a in range(3):
            assert magnetization(s, z, a) == pytest.approx(math.tanh(s.h[a]), abs=1e-14)

    def test_zero_fixed_point(self):
        s = regular_spec(3, beta=0.3)
        assert magnetization(s, np.zeros(1), 0) == 0.0

    def test_reference(self):
        s = regular_spec(3, 0.2, 0.1)
        assert magnetization(s, solve(s), 0) == pytest.approx(M_K3, abs=1e-12)


class TestEdgeCorrelation:
    def test_zero_coupling_factorises(self):
        s = ModelSpec(2, [[1, 1], [1, 1]], ["1/2", "1/2"], {(0, 0): 0.3, (0, 1): 0.0, (1, 1): 0.3},
                      [0.2, 0.4])
        z = solve(s).z
        es = class_edge_set(s)
        expect = math.tanh(z[es.index[(0, 1)]]) * math.tanh(z[es.index[(1, 0)]])
        assert edge_correlation(s, z, 0, 1) == pytest.approx(expect, abs=1e-15)

    def test_zero_fixed_point(self):
        s = regular_spec(3, beta=0.3)
        assert edge_correlation(s, np.zeros(1), 0, 0) == pytest.approx(math.tanh(0.3))

    @given(st.floats(0, 2), st.floats(-3, 3), st.floats(-3, 3))
    def test_two_spin_enumeration(self, beta, z1, z2):
        s = ModelSpec(2, [[0, 1], [1, 0]], ["1/2", "1/2"], beta, 0.0)
        assert edge_correlation(s, np.array([z1, z2]), 0, 1) == pytest.approx(
            two_spin_correlation(beta, z1, z2), abs=1e-14)

    def test_symmetric(self):
        s = figure_one_spec(h=[0.1, 0.4, 0.2])
        z = solve(s).z
        for a, b in class_edge_set(s).pairs:
            assert edge_correlation(s, z, a, b) == edge_correlation(s, z, b, a)

    def test_not_an_edge(self):
        with pytest.raises(StructuralError):
            edge_correlation(figure_one_spec(), np.zeros(6), 0, 2)

    def test_reference(self):
        s = regular_spec(3, 0.2, 0.1)
        assert edge_correlation(s, solve(s), 0, 0) == pytest.approx(GAMMA_K3, abs=1e-12)


class TestAverages:
    def test_single_class(self):
        s = regular_spec(3, 0.2, 0.1)
        z = solve(s).z
        m, d = averages(s, z)
        assert m == magnetization(s, z, 0)
        assert d == pytest.approx(1.5 * edge_correlation(s, z, 0, 0))

    def test_zero_beta(self):
        s = figure_one_spec(beta=0.0, h=[0.1, 0.2, 0.3])
        m, _ = averages(s, solve(s).z)
        assert m == pytest.approx(sum(float(a) * math.tanh(h) for a, h in zip(s.alpha, s.h)))

    def test_weights_match_edge_counts(self):
        s = figure_one_spec()
        g = generate(s, 40, 11)
        counts = edge_type_counts(g)
        total = sum(edge_weight(s, a, b) for a, b in class_edge_set(s).pairs if a <= b)
        assert total * 40 == pytest.approx(g.n_edges)
        for (a, b), c in counts.items():
            assert edge_weight(s, a, b) * 40 == pytest.approx(c)


class TestPressure:
    def test_zero_beta(self):
        s = figure_one_spec(beta=0.0, h=[0.3, -0.7, 1.1])
        assert bethe_pressure(s, solve(s).z) == pytest.approx(free_pressure(s), abs=1e-15)

    def test_zero_field_subcritical(self):
        s = figure_one_spec(beta=0.2, h=0.0)
        th = math.tanh(0.2)
        expect = math.log(2) - 0.25 * sum(float(s.alpha[a]) * s.k[a][b] * math.log(1 - th**2)
                                          for a in range(3) for b in range(3))
        assert bethe_pressure(s, np.zeros(6)) == pytest.approx(expect, abs=1e-15)

    def test_reference(self):
        s = regular_spec(3, 0.2, 0.1)
        assert bethe_pressure(s, solve(s)) == pytest.approx(P_K3, abs=1e-13)

    def test_needs_finite_point(self):
        with pytest.raises(StructuralError):
            bethe_pressure(regular_spec(3, 0.2, 0.1), np.array([math.inf]))

    @pytest.mark.parametrize("spec", [regular_spec(3, 0.2, 0.1),
                                      figure_one_spec(beta=0.3, h=[0.1, 0.2, 0.05])])
    def test_derivative_identity(self, spec):
        step = 1e-4
        for pair in spec.beta:
            up = spec.with_beta({**spec.beta, pair: spec.beta[pair] + step})
            dn = spec.with_beta({**spec.beta, pair: spec.beta[pair] - step})
            fd = (bethe_pressure(up, fixed_point_nonneg(up)) - bethe_pressure(dn, fixed_point_nonneg(dn))) / (2 * step)
            assert fd == pytest.approx(pressure_beta_derivative(spec, solve(spec), *pair), abs=1e-6)

    def test_field_derivative_is_magnetization(self):
        s = figure_one_spec(beta=0.3, h=[0.1, 0.2, 0.05])
        step = 1e-5
        for a in range(3):
            hu, hd = list(s.h), list(s.h)
            hu[a] += step
            hd[a] -= step
            su, sd = s.with_h(hu), s.with_h(hd)
            fd = (bethe_pressure(su, solve(su)) - bethe_pressure(sd, solve(sd))) / (2 * step)
            assert fd == pytest.approx(float(s.alpha[a]) * magnetization(s, solve(s), a), abs=1e-7)

    def test_derivative_limits(self):
        s = figure_one_spec(beta=1e-12, h=[0.1, 0.2, 0.3])
        z = solve(s).z
        assert pressure_beta_derivative(s, z, 0, 1) == pytest.approx(
            edge_weight(s, 0, 1) * math.tanh(0.1) * math.tanh(0.2), abs=1e-10)
        t = regular_spec(3, beta=0.3)
        assert pressure_beta_derivative(t, np.zeros(1), 0, 0) == pytest.approx(1.5 * math.tanh(0.3))


class TestSpontaneous:
    def test_subcritical(self):
        assert spontaneous_magnetization(regular_spec(3, beta=0.4), 0) == 0.0

    def test_supercritical(self):
        assert spontaneous_magnetization(regular_spec(3, beta=0.8), 0) == pytest.approx(S_K3_08, abs=1e-10)

    def test_large_beta(self):
        assert spontaneous_magnetization(regular_spec(3, beta=8.0), 0) == pytest.approx(1.0, abs=1e-9)

    def test_critical(self):
        with pytest.raises(CriticalPointError):
            spontaneous_magnetization(regular_spec(3, beta=math.atanh(0.5)), 0)

    def test_needs_zero_field(self):
        with pytest.raises(RegimeError):
            spontaneous_magnetization(regular_spec(3, 0.8, 0.1), 0)

    def test_approach_from_positive_field(self):
        base = regular_spec(3, beta=0.7)
        S = spontaneous_magnetization(base, 0)
        prev = math.inf
        for j in range(2, 7):
            s = base.with_h(10.0**-j)
            m = magnetization(s, fixed_point_nonneg(s), 0)
            assert S - 1e-11 <= m < prev
            prev = m
        assert prev - S < 1e-5


def test_regime_labels():
    assert regime_of(0.5) == "subcritical"
    assert regime_of(1 + 1e-8) == "critical"
    assert regime_of(1.5) == "supercritical"


def test_report_contents():
    rep = solve_and_report(regular_spec(3, 0.8, 0.0))
    d = rep.to_dict()
    assert d["regime"] == "supercritical"
    assert d["spontaneous_magnetization"][0] == pytest.approx(S_K3_08, abs=1e-10)
    rep = report(regular_spec(3, math.atanh(0.5), 0.0), np.zeros(1))
    assert "critical" in rep.flags and rep.spontaneous_magnetization is None


@given(st.integers(0, 10_000))
def test_observables_in_range(seed):
    s = random_spec(np.random.default_rng(seed), h_range=(0.01, 1))
    rep = solve_and_report(s)
    assert all(-1 <= m <= 1 for m in rep.magnetization)
    assert all(-1 <= g <= 1 for g in rep.edge_correlation.values())
    assert math.isfinite(rep.bethe_pressure)
