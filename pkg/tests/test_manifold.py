import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from hesslab.errors import ConfigError, DomainError
from hesslab.manifold import (ChartPoint, FlatTorus, FubiniStudyP1, ProductOfP1, alpha, curvature_at,
                              euclidean_sphere_area, exp_map, exp_taylor_residual, from_config,
                              geodesic_ball_volume, geodesic_sphere_area, log_map, metric_at,
                              normalized_chart, sample_bisectional)


def fs_geodesic(z0: complex, xi: complex) -> complex:
    """Integrate z'' = 2 conj(z) z'^2 / (1 + |z|^2), the Fubini-Study geodesic equation."""

    def rhs(t, y):
        z, v = y[0] + 1j * y[1], y[2] + 1j * y[3]
        a = 2 * np.conj(z) * v * v / (1 + abs(z) ** 2)
        return [v.real, v.imag, a.real, a.imag]

    sol = solve_ivp(rhs, (0, 1), [z0.real, z0.imag, xi.real, xi.imag], rtol=1e-12, atol=1e-13)
    return sol.y[0, -1] + 1j * sol.y[1, -1]


def chordal_distance(z: complex, w: complex) -> float:
    # round sphere of radius 1/2: d = arctan(|z - w| / |1 + conj(z) w|)
    return math.atan2(abs(z - w), abs(1 + np.conj(z) * w))


P1 = FubiniStudyP1()
cplx = st.complex_numbers(max_magnitude=1.5, allow_nan=False, allow_infinity=False)


class TestMetric:
    def test_examples(self):
        assert np.allclose(metric_at(FlatTorus(2), [0.3, 0.7]), np.eye(2))
        assert metric_at(P1, [0.0]).real == pytest.approx(1.0)
        assert metric_at(P1, [1.0]).real == pytest.approx(0.25)
        assert metric_at(P1, ChartPoint.of([1j], 1)).real == pytest.approx(0.25)

    def test_outside_chart(self):
        with pytest.raises(DomainError):
            metric_at(P1, [5.0])

    def test_product_block(self):
        M = ProductOfP1(2)
        G = metric_at(M, [1.0, 0.0])
        assert np.allclose(G, np.diag([0.25, 1.0]))


class TestCurvature:
    def test_examples(self):
        assert np.all(curvature_at(FlatTorus(2), [0, 0]) == 0)
        c = curvature_at(P1, [0.0])
        assert c.shape == (1, 1, 1, 1) and c.real.item() > 0

    def test_product_mixed_vanish(self):
        c = curvature_at(ProductOfP1(2), [0, 0])
        for i, j, k, l in np.ndindex(c.shape):
            if len({i, j, k, l}) > 1:
                assert c[i, j, k, l] == 0

    def test_kahler_symmetry(self):
        for M in (P1, ProductOfP1(2), FlatTorus(2)):
            c = M.curvature()
            assert np.allclose(c, np.transpose(c, (2, 3, 0, 1)))
            assert np.allclose(c, np.conj(np.transpose(c, (1, 0, 3, 2))))

    @pytest.mark.parametrize("M", [FlatTorus(2), P1, ProductOfP1(2)], ids=repr)
    def test_bisectional_nonnegative(self, M):
        assert sample_bisectional(M, 10_000, seed=3).min() >= -1e-12


class TestExpLog:
    def test_torus(self):
        T = FlatTorus(1)
        w = exp_map(T, [0.9], [0.2])
        assert w.array[0] == pytest.approx(0.1)
        assert log_map(T, [0.95], [0.05])[0] == pytest.approx(0.1)
        assert np.allclose(exp_map(T, [0.3 + 0.2j], [0]).array, 0.3 + 0.2j)

    def test_p1_quarter_turn(self):
        w = exp_map(P1, [0.0], [math.pi / 4], strict=False)
        assert abs(w.array[0] - 1.0) < 1e-8
        assert abs(fs_geodesic(0j, math.pi / 4) - 1.0) < 1e-8

    def test_strict_bound(self):
        with pytest.raises(DomainError):
            exp_map(P1, [0.0], [0.8])
        with pytest.raises(DomainError):
            log_map(P1, [0.0], [2.0])

    @given(cplx, st.complex_numbers(max_magnitude=0.3, allow_nan=False, allow_infinity=False))
    @settings(max_examples=60, deadline=None)
    def test_matches_ode(self, z, v):
        xi = v * (1 + abs(z) ** 2)  # unit conversion so that |xi|_z = |v|
        w, cw = P1.exp(np.array([z]), np.array([xi]), 0)
        ref = fs_geodesic(complex(z), complex(xi))
        got = w[0] if int(cw) == 0 else 1 / w[0]
        assert abs(got - ref) <= 1e-8 * max(1, abs(ref))

    @given(cplx, st.complex_numbers(max_magnitude=0.3, allow_nan=False, allow_infinity=False))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, z, v):
        xi = np.array([v * (1 + abs(z) ** 2)])
        w, cw = P1.exp(np.array([z]), xi, 0)
        back = P1.log(np.array([z]), w, 0, cw)
        assert np.abs(back - xi).max() <= 1e-9 * max(1.0, np.abs(xi).max())

    def test_round_trip_product_and_torus(self):
        rng = np.random.default_rng(0)
        for M in (ProductOfP1(2), FlatTorus(2)):
            z = rng.uniform(-0.8, 0.8, (200, 2)) + 1j * rng.uniform(-0.8, 0.8, (200, 2))
            if isinstance(M, FlatTorus):
                z = z.real % 1 + 1j * (z.imag % 1)
            xi = rng.standard_normal((200, 2)) + 1j * rng.standard_normal((200, 2))
            xi *= 0.2 / M.norm(z, xi)[:, None]
            w, cw = M.exp(z, xi)
            back = M.log(z, w, 0, cw)
            assert np.abs(back - xi).max() < 1e-9

    @given(cplx, cplx)
    @settings(max_examples=100, deadline=None)
    def test_distance_symmetric_and_closed_form(self, z, w):
        d = chordal_distance(complex(z), complex(w))
        if d > P1.injectivity_bound:
            return
        a = P1.norm(np.array([z]), P1.log(np.array([z]), np.array([w])))
        b = P1.norm(np.array([w]), P1.log(np.array([w]), np.array([z])))
        assert abs(a - b) < 1e-9
        assert abs(a - d) < 1e-9

    def test_log_same_point(self):
        assert np.allclose(log_map(P1, [0.4 - 0.1j], [0.4 - 0.1j]), 0)


class TestCharts:
    def test_validate(self):
        v = normalized_chart(P1, [0.0]).validate()
        assert v.linear_residual < 1e-9
        assert v.g0_residual < 1e-9
        assert abs(v.fitted_curvature.real.item() - curvature_at(P1, [0]).real.item()) < 1e-6

    def test_validate_off_origin(self):
        v = normalized_chart(P1, ChartPoint.of([0.7 + 0.3j])).validate()
        assert v.curvature_residual < 1e-6
        assert v.holomorphic_quadratic_residual < 1e-6

    def test_torus_translation(self):
        ch = normalized_chart(FlatTorus(1), [0.25])
        assert np.allclose(ch.forward(np.array([0.1])), 0.35)

    def test_taylor_residual(self):
        assert exp_taylor_residual(FlatTorus(1), [0.01], [0.02]) == 0
        assert exp_taylor_residual(P1, [0.0], [0.0]) == 0
        xi0 = np.array([0.08 + 0.05j])
        r = np.array([2.0 ** -k for k in range(5)])
        res = [exp_taylor_residual(P1, 0.5 * s * xi0, s * xi0) for s in r]
        slope = np.polyfit(np.log(r), np.log(res), 1)[0]
        assert slope >= 4 - 0.3


class TestSphereArea:
    def test_torus_exact(self):
        assert geodesic_sphere_area(FlatTorus(1), [0.5], 0.1) == pytest.approx(2 * math.pi * 0.1, rel=1e-10)

    @pytest.mark.parametrize("r", [0.02, 0.1, 0.2, 0.5])
    def test_p1_closed_form(self, r):
        assert abs(geodesic_sphere_area(P1, [0.3j], r) - math.pi * math.sin(2 * r)) < 1e-6

    def test_ball_normalisation(self):
        # midpoint error on the polar angles is O(samples^-2), so n = 2 needs 64 samples for 1e-3
        for M, x, s in ((P1, [0], None), (FlatTorus(1), [0], None), (ProductOfP1(2), [0, 0], 64)):
            d = 2 * M.n
            vol = geodesic_ball_volume(M, x, 0.01, angular_samples=s, radial_nodes=4)
            assert vol / (alpha(d) * 0.01 ** d) == pytest.approx(1, abs=1e-3)

    def test_p1_ball_closed_form(self):
        # spherical cap on radius 1/2: (pi/2)(1 - cos 2r)
        assert geodesic_ball_volume(P1, [0], 0.3) == pytest.approx(0.5 * math.pi * (1 - math.cos(0.6)), rel=1e-8)

    def test_radius_guard(self):
        with pytest.raises(DomainError):
            geodesic_sphere_area(P1, [0], 1.0)

    def test_euclidean(self):
        assert euclidean_sphere_area(1, 1.0) == pytest.approx(2 * math.pi)
        assert euclidean_sphere_area(2, 1.0) == pytest.approx(2 * math.pi ** 2)


class TestConfig:
    def test_kinds(self):
        assert from_config({"kind": "flat_torus", "n": 2, "periods": [1.0, 2.0]}).n == 2
        assert isinstance(from_config('{"kind": "fubini_study_p1"}'), FubiniStudyP1)
        assert from_config({"kind": "product_p1", "factors": 3}).n == 3

    @pytest.mark.parametrize("cfg", [{"kind": "hyperbolic"}, {"kind": "flat_torus", "n": 0},
                                     {"kind": "flat_torus", "n": 2, "periods": [1]}, [1, 2]])
    def test_bad(self, cfg):
        with pytest.raises(ConfigError):
            from_config(cfg)

    def test_round_trip(self):
        for M in (FlatTorus(2, [1.0, 0.5]), P1, ProductOfP1(2)):
            assert from_config(M.to_config()).to_config() == M.to_config()
