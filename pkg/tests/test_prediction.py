import numpy as np
import pytest
from scipy import optimize, stats

from plategp.inference import McmcTrace
from plategp.model import Dataset, DomainError, ExtendedHyperparams, Observation, parameter_names
from plategp.operators import QuantityKind
from plategp.oracles import PlateGeometry, navier_field
from plategp.prediction import (
    Targets,
    fixed_summary,
    mc_predictive,
    mixture_quantiles,
    predictive_posterior,
    prior_variance,
    read_fields,
    summarize_mixture,
    write_fields,
)

Q = QuantityKind
NU = 0.3
PARAMS = ExtendedHyperparams.from_natural(0.003, 0.5, 0.5, 1.0, {"w": 1e-12, "q": 1e-6})


def grid(n, lo=0.05, hi=0.95):
    g = np.linspace(lo, hi, n)
    return np.array([(x, y) for x in g for y in g])


def navier_data(n=5, kinds=(Q.W, Q.Q), values=None):
    geom = PlateGeometry()
    pts = grid(n)
    obs = []
    for k in kinds:
        vals = navier_field(geom, 1.0, k, pts) if values is None else np.full(len(pts), values)
        obs += [Observation(p[0], p[1], k, v) for p, v in zip(pts, vals)]
    return Dataset(obs, (1.0, 1.0))


class TestTargets:
    def test_grid_is_quantity_major(self):
        t = Targets.grid([[0.1, 0.2], [0.3, 0.4]], ["w", "kappa_x"])
        assert t.kinds == (Q.W, Q.W, Q.KAPPA_X, Q.KAPPA_X)
        np.testing.assert_array_equal(t.points[2], [0.1, 0.2])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Targets([[0.1, 0.2]], (Q.W, Q.Q))


class TestFixedPosterior:
    def test_interpolates_noiseless_training_values(self):
        pts = grid(3)
        vals = np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])
        d = Dataset([Observation(p[0], p[1], Q.W, v) for p, v in zip(pts, vals)], (1.0, 1.0))
        params = ExtendedHyperparams.from_natural(1.0, 0.5, 0.5, 1.0, {"w": 1e-12})
        mean, var = predictive_posterior(d, params, NU, Targets(pts, [Q.W] * len(pts)))
        np.testing.assert_allclose(mean, vals, atol=1e-6)
        assert np.all(var <= 1e-6)

    def test_zero_data_gives_zero_mean(self):
        d = navier_data(values=0.0)
        t = Targets.grid(grid(4, 0.1, 0.9), [Q.W, Q.M_X])
        mean, var = predictive_posterior(d, PARAMS, NU, t)
        np.testing.assert_array_equal(mean, 0.0)
        assert np.all(var <= prior_variance(t.kinds, PARAMS, NU) * (1 + 1e-12))

    def test_more_data_never_raises_variance(self):
        t = Targets.grid(grid(6, 0.02, 0.98), [Q.W, Q.KAPPA_X])
        _, v_small = predictive_posterior(navier_data(3), PARAMS, NU, t)
        _, v_big = predictive_posterior(navier_data(5), PARAMS, NU, t)
        scale = prior_variance(t.kinds, PARAMS, NU)
        assert np.all(v_big <= v_small + 1e-9 * scale)

    def test_moment_follows_curvature_relation(self):
        d = navier_data()
        pts = grid(4, 0.1, 0.9)
        t = Targets.grid(pts, [Q.M_X, Q.KAPPA_X, Q.KAPPA_Y])
        mean, _ = predictive_posterior(d, PARAMS, NU, t)
        mx, kx, ky = mean.reshape(3, -1)
        np.testing.assert_allclose(mx, PARAMS.rigidity * (kx + NU * ky), rtol=1e-9, atol=1e-12 * np.abs(mx).max())

    def test_recovers_unobserved_moment(self):
        d = navier_data()
        pts = grid(5, 0.2, 0.8)
        mean, _ = predictive_posterior(d, PARAMS, NU, Targets(pts, [Q.M_X] * len(pts)))
        truth = navier_field(PlateGeometry(), 1.0, Q.M_X, pts)
        assert np.sqrt(np.mean((mean - truth) ** 2)) / np.abs(truth).max() < 0.02

    def test_targets_outside_plate_rejected(self):
        with pytest.raises(DomainError):
            predictive_posterior(navier_data(3), PARAMS, NU, Targets([[1.5, 0.5]], [Q.W]))


class TestMixture:
    def test_single_gaussian_band(self):
        # the tolerance is on the probability scale
        q = mixture_quantiles(np.array([[1.0, -2.0]]), np.array([[4.0, 0.25]]), [0.005, 0.995])
        np.testing.assert_allclose(stats.norm.cdf(q[:, 0], 1.0, 2.0), [0.005, 0.995], atol=1e-6)
        np.testing.assert_allclose(stats.norm.cdf(q[:, 1], -2.0, 0.5), [0.005, 0.995], atol=1e-6)
        z = stats.norm.ppf(0.995)
        np.testing.assert_allclose(q[:, 0], [1 - 2 * z, 1 + 2 * z], rtol=1e-3)

    def test_two_component_quantiles_match_root_finding(self):
        means, variances = np.array([[0.0], [3.0]]), np.array([[1.0], [0.25]])
        q = mixture_quantiles(means, variances, [0.005, 0.5, 0.995], tol=1e-10)

        def cdf(x):
            return 0.5 * (stats.norm.cdf(x, 0, 1) + stats.norm.cdf(x, 3, 0.5))

        for p, val in zip([0.005, 0.5, 0.995], q[:, 0]):
            assert val == pytest.approx(optimize.brentq(lambda x: cdf(x) - p, -10, 10, xtol=1e-12), abs=1e-8)

    def test_zero_variance_components(self):
        q = mixture_quantiles(np.array([[2.0]]), np.array([[0.0]]), [0.005, 0.995])
        np.testing.assert_allclose(q[:, 0], 2.0, atol=1e-9)

    def test_total_variance(self):
        s = summarize_mixture(np.zeros((1, 2)), (Q.W,), np.array([[0.0], [2.0]]), np.array([[1.0], [3.0]]))
        assert s.mean[0] == 1.0
        assert s.variance[0] == pytest.approx(2.0 + 1.0)
        assert s.lower[0] <= s.mean[0] <= s.upper[0]


def one_draw_trace(params, kinds, n=1):
    vec = np.exp(params.to_vector(kinds))
    return McmcTrace(parameter_names(kinds), np.tile(vec, (n, 1)), np.zeros(n), np.ones(n, bool),
                     noise_kinds=kinds)


class TestMonteCarlo:
    def test_repeated_draw_equals_fixed(self):
        d = navier_data(4)
        t = Targets.grid(grid(3, 0.2, 0.8), [Q.W, Q.Q])
        fixed = fixed_summary(d, PARAMS, NU, t)
        mc = mc_predictive(d, one_draw_trace(PARAMS, d.noise_kinds, 25), NU, t, stride=5)
        np.testing.assert_allclose(mc.mean, fixed.mean, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(mc.variance, fixed.variance, rtol=1e-12, atol=1e-20)
        np.testing.assert_allclose(mc.upper, fixed.upper, rtol=1e-9)

    def test_bad_stride(self):
        d = navier_data(3)
        with pytest.raises(ValueError):
            mc_predictive(d, one_draw_trace(PARAMS, d.noise_kinds), NU, Targets([[0.5, 0.5]], [Q.W]), stride=0)

    def test_band_is_wider_than_fixed_with_spread_draws(self):
        d = navier_data(4)
        kinds = d.noise_kinds
        draws = np.exp(np.array([PARAMS.to_vector(kinds) + s for s in (-0.3, 0.0, 0.3)]))
        tr = McmcTrace(parameter_names(kinds), draws, np.zeros(3), np.ones(3, bool), noise_kinds=kinds)
        t = Targets([[0.5, 0.5]], [Q.M_X])
        mc = mc_predictive(d, tr, NU, t, stride=1)
        fixed = fixed_summary(d, PARAMS, NU, t)
        assert mc.variance[0] >= fixed.variance[0]


def test_field_roundtrip(tmp_path):
    d = navier_data(3)
    s = fixed_summary(d, PARAMS, NU, Targets.grid(grid(3, 0.3, 0.7), [Q.W, Q.Q_Y]))
    write_fields(tmp_path / "f.csv", s)
    back = read_fields(tmp_path / "f.csv")
    assert back.kinds == s.kinds
    for name in ("points", "mean", "variance", "lower", "upper"):
        np.testing.assert_array_equal(getattr(back, name), getattr(s, name))
    assert back.select(Q.Q_Y).mean.shape == (9,)
