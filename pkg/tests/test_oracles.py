import numpy as np
import pytest

from plategp.operators import QuantityKind
from plategp.oracles import (
    LoadKind,
    LoadSpec,
    PlateGeometry,
    navier_amplitude,
    navier_field,
    ritz_center_coefficient,
    ritz_field,
    ritz_solve,
)

from reference import ritz_dense_solution

Q = QuantityKind


def interior(a, b, n=7):
    xs, ys = np.linspace(0.05 * a, 0.95 * a, n), np.linspace(0.05 * b, 0.95 * b, n)
    return np.array([(x, y) for x in xs for y in ys])


class TestNavier:
    @pytest.mark.parametrize("geom", [PlateGeometry(), PlateGeometry(2.0, 1.0, 3.5, 0.25)])
    def test_load_operator_recovers_load(self, geom):
        pts = interior(geom.a, geom.b)
        q = navier_field(geom, 1.7, Q.Q, pts)
        expected = 1.7 * np.sin(np.pi * pts[:, 0] / geom.a) * np.sin(np.pi * pts[:, 1] / geom.b)
        np.testing.assert_allclose(q, expected, atol=1e-12 * 1.7)

    def test_square_centre_deflection(self):
        geom = PlateGeometry(1.3, 1.3, 2.0)
        assert navier_amplitude(geom, 0.8) == pytest.approx(0.8 * 1.3 ** 4 / (4 * np.pi ** 4 * 2.0), rel=1e-14)
        assert navier_field(geom, 0.8, Q.W, [[0.65, 0.65]])[0] == pytest.approx(navier_amplitude(geom, 0.8))

    @pytest.mark.parametrize("kind", [Q.W, Q.M_X, Q.M_Y])
    def test_simply_supported_edges(self, kind):
        geom = PlateGeometry(1.0, 2.0)
        t = np.linspace(0, 1, 9)
        edges = np.concatenate([np.c_[0 * t, 2 * t], np.c_[1 + 0 * t, 2 * t], np.c_[t, 0 * t], np.c_[t, 2 + 0 * t]])
        scale = np.abs(navier_field(geom, 1.0, kind, [[0.5, 1.0]])).max()
        np.testing.assert_allclose(navier_field(geom, 1.0, kind, edges), 0.0, atol=1e-12 * scale)

    def test_curvature_matches_finite_difference(self):
        geom = PlateGeometry()
        p, h = np.array([0.3, 0.6]), 1e-4
        w = lambda q: navier_field(geom, 1.0, Q.W, np.array([q]))[0]  # noqa: E731
        fd = -(w(p + [h, 0]) - 2 * w(p) + w(p - [h, 0])) / h ** 2
        assert navier_field(geom, 1.0, Q.KAPPA_X, [p])[0] == pytest.approx(fd, rel=1e-6)

    def test_uniform_load_rejected(self):
        with pytest.raises(ValueError):
            navier_field(PlateGeometry(), 1.0, Q.W, [[0.5, 0.5]], LoadSpec(LoadKind.UNIFORM))


@pytest.fixture(scope="module")
def clamped():
    return ritz_solve(PlateGeometry(), 1.0, 60, 60)


class TestRitz:
    def test_matches_dense_quadrature(self):
        geom = PlateGeometry(1.0, 1.5, 2.0)
        sol = ritz_solve(geom, 0.7, 6, 5)
        ref = ritz_dense_solution(1.0, 1.5, 2.0, 0.7, 6, 5)
        np.testing.assert_allclose(sol.coefficients, ref, rtol=1e-8, atol=1e-12 * np.abs(ref).max())

    def test_linear_in_load(self):
        a, b = ritz_solve(PlateGeometry(), 1.0, 10, 10), ritz_solve(PlateGeometry(), 3.0, 10, 10)
        np.testing.assert_allclose(b.coefficients, 3.0 * a.coefficients, rtol=1e-12)

    def test_energy_decreases_with_terms(self):
        energies = [ritz_solve(PlateGeometry(), 1.0, n, n).energy() for n in (2, 5, 10, 20, 40)]
        assert np.all(np.diff(energies) <= 1e-15)

    def test_clamped_edges(self, clamped):
        t = np.linspace(0, 1, 11)
        left = np.c_[0 * t, t]
        bottom = np.c_[t, 0 * t]
        assert np.abs(ritz_field(clamped, Q.W, left)).max() < 1e-14
        assert np.abs(ritz_field(clamped, Q.R_X, left)).max() < 1e-12
        assert np.abs(ritz_field(clamped, Q.R_Y, bottom)).max() < 1e-12

    def test_symmetric_about_centre_lines(self, clamped):
        pts = interior(1.0, 1.0, 5)
        w = ritz_field(clamped, Q.W, pts)
        np.testing.assert_allclose(ritz_field(clamped, Q.W, np.c_[1 - pts[:, 0], pts[:, 1]]), w, rtol=1e-12)
        np.testing.assert_allclose(ritz_field(clamped, Q.W, pts[:, ::-1]), w, rtol=1e-12)

    def test_square_centre_coefficient_plateaus(self):
        coef = {n: ritz_center_coefficient(ritz_solve(PlateGeometry(), 1.0, n, n)) for n in (50, 100, 200)}
        assert abs(coef[100] - coef[200]) < 1e-3 * coef[200]
        assert abs(coef[50] - coef[200]) < 1e-3 * coef[200]
        # classical clamped square plate: w_c = 0.00126 q a^4 / D
        assert coef[200] == pytest.approx(0.00126, rel=5e-3)

    @pytest.mark.parametrize("p", [(0.5, 0.5), (0.3, 0.45)])
    def test_curvature_matches_finite_difference(self, clamped, p):
        p, h = np.array(p), 1e-4
        w = lambda q: ritz_field(clamped, Q.W, np.array([q]))[0]  # noqa: E731
        fd = -(w(p + [h, 0]) - 2 * w(p) + w(p - [h, 0])) / h ** 2
        assert ritz_field(clamped, Q.KAPPA_X, [p])[0] == pytest.approx(fd, rel=1e-6)

    def test_load_is_applied_value(self, clamped):
        np.testing.assert_array_equal(ritz_field(clamped, Q.Q, interior(1, 1, 3)), 1.0)

    def test_moments_converged(self):
        pts = interior(1.0, 1.0, 5)
        coarse = ritz_field(ritz_solve(PlateGeometry(), 1.0, 100, 100), Q.M_X, pts)
        fine = ritz_field(ritz_solve(PlateGeometry(), 1.0, 200, 200), Q.M_X, pts)
        assert np.abs(coarse - fine).max() < 1e-3 * np.abs(fine).max()
