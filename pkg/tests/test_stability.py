import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hesslab.errors import DomainError
from hesslab.field import LatticeField
from hesslab.manifold import FlatTorus
from hesslab.stability import (ExponentInputs, calibrate_moment_constant, degiorgi_simulate, degiorgi_threshold,
                               exp_moment_report, fit_c1, level_profile, optimal_s0, power_profile,
                               s_star_bound, stability_gap_bound, sup_gap_rate_study, volume_decay_fit)

T1 = FlatTorus(1)
N = 32


def const(c):
    return LatticeField(T1, np.full((N, N), float(c)), 1 / N)


def random_field(seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return LatticeField(T1, scale * rng.standard_normal((N, N)), 1 / N)


class TestLevelProfile:
    def test_identical_fields(self):
        v = random_field(0)
        prof = level_profile(v, v, const(0), 0.0)
        pos = prof.s_grid > 0
        assert np.all(prof.a_values == 0) and np.all(prof.vol_omega[pos] == 0)

    def test_constant_gap(self):
        c = 0.3
        s = np.linspace(0, 0.5, 11)
        prof = level_profile(const(c - 1), const(-1), const(0), 0.0, s)
        assert np.allclose(prof.a_values, np.maximum(c - s, 0), atol=1e-14)
        assert np.allclose(prof.vol_omega, (s < c).astype(float))
        assert volume_decay_fit(prof, 0.5) == pytest.approx(c - 0.0, rel=0.2)

    @given(st.integers(0, 1000), st.floats(0.0, 0.9))
    @settings(max_examples=30, deadline=None)
    def test_monotone(self, seed, delta):
        v = random_field(seed)
        phi = random_field(seed + 1)
        prof = level_profile(v, phi, random_field(seed + 2, 0.1), delta)
        assert np.all(np.diff(prof.vol_omega) <= 0)
        assert np.all(np.diff(prof.a_values) <= 1e-14)
        assert np.all(prof.a_values >= 0)
        assert np.all(prof.a_values[prof.vol_omega == 0] == 0)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_monotone_in_delta(self, seed):
        v = random_field(seed).with_values(-np.abs(random_field(seed).values))
        phi = random_field(seed + 1)
        s = np.linspace(0, 3, 31)
        lo, hi = level_profile(v, phi, const(0), 0.1, s), level_profile(v, phi, const(0), 0.4, s)
        assert np.all(lo.vol_omega <= hi.vol_omega) and np.all(lo.a_values <= hi.a_values + 1e-14)

    def test_volume_bound_sufficient_levels(self):
        rng = np.random.default_rng(3)
        phi = LatticeField(T1, -1 - rng.uniform(0, 1, (N, N)), 1 / N)
        v = phi.with_values(np.minimum(phi.values + rng.uniform(0, 0.3, (N, N)), 0))
        prof = level_profile(v, phi, const(0), 0.05, np.linspace(0, 0.5, 51))
        assert prof.check_36["holds_where_sufficient"]
        assert prof.check_36["sufficient_levels"].any()

    def test_stated_condition_counterexample(self):
        # v = phi = -1 with delta = 1/2: delta |v| = 1/2, no L1 mass, yet Omega_s is all of M for s < 1/2
        prof = level_profile(const(-1), const(-1), const(0), 0.5, [0.0, 0.25, 0.75])
        assert prof.check_36["stated_condition"]
        assert prof.check_36["violations"] == [0.25]
        assert prof.check_36["holds_where_sufficient"]

    def test_mismatched(self):
        other = LatticeField(T1, np.zeros((16, 16)), 1 / 16)
        with pytest.raises(DomainError):
            level_profile(const(0), other, const(0), 0.0)
        with pytest.raises(DomainError):
            level_profile(const(0), const(0), const(0), 1.0)

    def test_density_weights_a_not_vol(self):
        s = [0.0, 0.1]
        a = level_profile(const(0.2), const(0.0), const(0.0), 0.0, s)
        b = level_profile(const(0.2), const(0.0), const(math.log(2.0)), 0.0, s)
        assert np.allclose(b.a_values, 2 * a.a_values) and np.allclose(b.vol_omega, a.vol_omega)

    def test_decay_fit_needs_levels(self):
        prof = level_profile(const(0), const(0), const(0), 0.0)
        with pytest.raises(DomainError):
            volume_decay_fit(prof, 0.5)


class TestDeGiorgi:
    def test_threshold(self):
        assert degiorgi_threshold(1, 1, 0, 0.25) == pytest.approx(1.0)
        assert degiorgi_threshold(2.0, 0.5, 0.3, 0.0) == 0.3
        g1 = degiorgi_threshold(1.0, 0.5, 0.2, 0.4) - 0.2
        assert degiorgi_threshold(2.0, 0.5, 0.2, 0.4) - 0.2 == pytest.approx(2 * g1)
        assert (degiorgi_threshold(1.0, 0.5, 0.2, 0.2) - 0.2) * 2 ** 0.5 == pytest.approx(g1)
        with pytest.raises(DomainError):
            degiorgi_threshold(1, 0, 0, 1)

    def test_power_profile_b0_by_scan(self):
        phi, b0 = power_profile(1.0, 1.0, 3.0)
        mu = 0.25
        s = np.linspace(0, 1, 801)
        p = np.array([phi(x) for x in s])
        best = max(float(np.max((s[i + 1:] - s[i]) * p[i + 1:]) / p[i] ** (1 + mu))
                   for i in range(len(s) - 1) if p[i] > 0)
        assert best <= b0(mu) * (1 + 1e-12)
        assert best == pytest.approx(b0(mu), rel=1e-3)
        with pytest.raises(DomainError):
            b0(0.5)

    def test_cube_profile(self):
        phi, b0 = power_profile(1.0, 1.0, 3.0)
        res = degiorgi_simulate(phi, b0(0.3), 0.3, 0.0)
        assert res.passed and res.vanish_point == pytest.approx(1.0, abs=1e-9)
        assert all(ph <= 2.0 ** -k * res.phi_steps[0] * (1 + 1e-12) for k, ph in enumerate(res.phi_steps))

    def test_zero_profile(self):
        res = degiorgi_simulate(lambda s: 0.0, 1.0, 0.5, 0.4)
        assert res.passed and res.vanish_point == 0.4 and res.threshold == 0.4

    def test_uncertified_witness(self):
        phi = lambda s: max(0.0, 1.0 - s)
        res = degiorgi_simulate(phi, 0.01, 0.5, 0.0)
        assert not res.certified and res.witness is not None
        s, r = res.witness
        assert r * phi(s + r) > 0.01 * phi(s) ** 1.5

    def test_table_input(self):
        s = np.linspace(0, 2, 201)
        p = np.maximum(0, 1 - s) ** 2
        res = degiorgi_simulate((s, p), 0.5, 0.5, 0.0)
        assert res.certified and res.vanish_point <= res.threshold
        bad = degiorgi_simulate((s, p[::-1]), 0.5, 0.5, 0.0)
        assert not bad.certified

    @given(st.floats(0.2, 5), st.floats(0.5, 3), st.floats(0.5, 4), st.floats(0.05, 1.0), st.floats(1.0, 3.0),
           st.floats(0, 0.9))
    @settings(max_examples=50, deadline=None)
    def test_random_certified(self, A, S, p, mu_frac, mult, s0_frac):
        mu = mu_frac / p
        phi, b0 = power_profile(A, S, p)
        res = degiorgi_simulate(phi, mult * b0(mu), mu, s0_frac * S)
        assert res.certified and res.halving_ok and res.within_threshold


class TestBounds:
    def test_gap_bound(self):
        assert stability_gap_bound(0.3, 0.5, 2.0, 0.0) == 0.3
        a = stability_gap_bound(0.3, 0.5, 2.0, 0.1) - 0.3
        assert stability_gap_bound(0.3, 0.5, 2.0, 0.2) - 0.3 == pytest.approx(a * 2 ** 0.5)
        with pytest.raises(DomainError):
            stability_gap_bound(0.0, 0.5, 1, 1)

    def test_optimal_s0(self):
        mu, C1, L = 0.4, 1.5, 0.02
        s_opt = optimal_s0(mu, C1, L)
        grid = np.geomspace(s_opt / 10, s_opt * 10, 2001)
        vals = [stability_gap_bound(s, mu, C1, L) for s in grid]
        k = int(np.argmin(vals))
        assert grid[k] == pytest.approx(s_opt, rel=5e-3)
        assert np.all(np.diff(vals[:k]) < 0) and np.all(np.diff(vals[k + 1:]) > 0)

    def test_fit_c1(self):
        mu = 0.5
        triples = [(0.5, 0.1, 0.04), (0.3, 0.05, 0.01), (0.02, 0.1, 0.01)]
        c = fit_c1(*zip(*triples), mu)
        for g, s0, L in triples:
            assert g <= stability_gap_bound(s0, mu, c, L) * (1 + 1e-12)

    def test_s_star(self):
        val, branch = s_star_bound(0.1, 1.0, 1.0, 1.0, 4.0, 2.0, 1e-6)
        assert branch == "l1" and val == pytest.approx(100.0)
        assert s_star_bound(0.1, 1.0, 1.0, 1.0, 4.0, 2.0, 0.0) == (pytest.approx(0.2), "linf")
        with pytest.raises(DomainError):
            s_star_bound(0.1, 1, 1, 1, 4, 1.0, 0.1)

    def test_exponent_inputs(self):
        e = ExponentInputs(4.0, 1, 2.0, 0.5)
        assert e.q0 == pytest.approx(4 / 3, abs=1e-12)
        assert e.mu == pytest.approx(0.9 / (4 / 3))
        with pytest.raises(DomainError):
            ExponentInputs(4.0, 1, 2.0, 0.5, mu=0.75)


class TestSupGap:
    def test_constant(self):
        phi = LatticeField.sample(T1, lambda z, c: np.full(z.shape[:-1], -0.2), 16)
        eps = [0.02, 0.012, 0.0072, 0.00432]
        fit = sup_gap_rate_study(phi, eps, exponents=ExponentInputs(4.0, 1, 2.0, 0.5))
        assert np.allclose(fit.values, eps, rtol=1e-12) and fit.slope == pytest.approx(1.0)
        assert fit.extra["passed"]


class TestMoments:
    def test_zero_excess(self):
        rep = exp_moment_report(const(0.2), const(0.0), const(0.0), 0.5, 0.05, [0.5])
        assert rep.A == pytest.approx(0.05)
        with pytest.raises(DomainError):
            exp_moment_report(const(0.2), const(0.0), const(0.0), 0.5, 0.3, [0.5])
        with pytest.raises(DomainError):
            exp_moment_report(const(0.2), const(0.0), const(0.0), 0.0, 0.05, [0.5])

    def test_homogeneity(self):
        rng = np.random.default_rng(1)
        gap = np.abs(rng.standard_normal((N, N)))
        a = exp_moment_report(const(0).with_values(gap), const(0), const(0), 0.5, 0.0, [0.3])
        b = exp_moment_report(const(0).with_values(2 * gap), const(0), const(0), 0.5, 0.0, [0.3 / 2])
        assert b.A == pytest.approx(2 * a.A)
        # beta t^{(n+1)/n} / (tA)^{1/n} with n = 1 scales like t, so halving beta cancels doubling
        assert b.rows[0][1] == pytest.approx(a.rows[0][1], rel=1e-12)

    def test_monotone_in_beta(self):
        gap = np.abs(random_field(4).values)
        rep = exp_moment_report(const(0).with_values(gap), const(0), const(0), 0.1, 0.2, [0.01, 0.1, 0.5, 1.0])
        lhs = [r[1] for r in rep.rows]
        assert lhs == sorted(lhs)
        C = calibrate_moment_constant(const(0).with_values(gap), const(0), const(0), 0.1, 0.2, 1.0)
        assert C >= 1
        assert exp_moment_report(const(0).with_values(gap), const(0), const(0), 0.1, 0.2, [1.0], C).rows[0][3]
