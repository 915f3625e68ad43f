import math

import numpy as np
import pytest
from scipy import stats

from plategp.inference import (
    HyperPrior,
    McmcConfig,
    McmcTrace,
    ProposalTooWideError,
    chain_diagnostics,
    initial_guess,
    mcmc_mean,
    metropolis_hastings,
    mh_sample,
    mle_optimize,
    read_trace,
    write_trace,
)
from plategp.model import Dataset, ExtendedHyperparams, Observation, parameter_names
from plategp.operators import QuantityKind
from plategp.oracles import PlateGeometry, navier_field

Q = QuantityKind
NU = 0.3


def navier_dataset(kinds, n=5, noise_sd=0.0, seed=0):
    geom = PlateGeometry()
    g = np.linspace(0.05, 0.95, n)
    pts = np.array([(x, y) for x in g for y in g])
    rng = np.random.default_rng(seed)
    obs = []
    for k in kinds:
        vals = navier_field(geom, 1.0, k, pts)
        vals = vals + noise_sd * np.std(vals) * rng.standard_normal(len(vals))
        obs += [Observation(p[0], p[1], k, v) for p, v in zip(pts, vals)]
    return Dataset(obs, (1.0, 1.0))


class ScriptedRng:
    """Feeds fixed normal and uniform draws to the sampler."""

    def __init__(self, normals, uniforms):
        self._n = iter(normals)
        self._u = iter(uniforms)

    def normal(self, size):
        return np.array([next(self._n) for _ in range(size)])

    def uniform(self):
        return next(self._u)


def std_normal(x):
    return -0.5 * float(np.sum(np.asarray(x) ** 2))


class TestMetropolis:
    def test_hand_counted_fixture(self):
        # state 0, unit step; each row is (step, uniform) and the outcome worked by hand
        script = [
            (0.5, 0.9),    # 0 -> 0.5: ratio 0.8825 < 0.9, reject
            (0.5, 0.5),    # accept, x = 0.5
            (-0.5, 0.99),  # back to 0 raises the target, accept
            (3.0, 0.02),   # ratio exp(-4.5) = 0.0111, reject
            (3.0, 0.01),   # accept, x = 3
            (-1.0, 0.99),  # 3 -> 2 raises the target, accept
            (1.0, 0.1),    # 2 -> 3: ratio exp(-2.5) = 0.082, reject
            (-2.0, 0.99),  # 2 -> 0, accept
            (0.0, 0.99),   # equal target, accept
            (1.0, 0.7),    # ratio exp(-0.5) = 0.607, reject
        ]
        rng = ScriptedRng([s for s, _ in script], [u for _, u in script])
        draws, lps, acc = metropolis_hastings(std_normal, [0.0], 1.0, 10, rng=rng)
        assert acc.tolist() == [False, True, True, False, True, True, False, True, True, False]
        assert acc.sum() == 6
        np.testing.assert_array_equal(draws[:, 0], [0, 0.5, 0, 0, 3, 2, 2, 0, 0, 0])
        np.testing.assert_allclose(lps, -0.5 * draws[:, 0] ** 2)

    def test_gaussian_target_distribution(self):
        draws, _, acc = metropolis_hastings(std_normal, [0.0], 2.4, 40_000, 1_000, rng=np.random.default_rng(1))
        thinned = draws[::20, 0]
        assert stats.kstest(thinned, "norm").pvalue > 0.01
        assert 0.2 < acc.mean() < 0.6

    def test_correlated_gaussian_moments(self):
        cov = np.array([[1.0, 0.8], [0.8, 1.0]])
        prec = np.linalg.inv(cov)
        draws, _, _ = metropolis_hastings(lambda x: -0.5 * x @ prec @ x, [0.0, 0.0], 0.8, 60_000, 2_000,
                                          rng=np.random.default_rng(2))
        np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.1)
        np.testing.assert_allclose(np.cov(draws, rowvar=False), cov, atol=0.1)

    def test_tiny_steps_always_accepted(self):
        _, _, acc = metropolis_hastings(std_normal, [0.3, -0.2], 1e-12, 2_000, rng=np.random.default_rng(0))
        assert acc.mean() >= 0.999

    def test_stall_aborts(self):
        def spike(x):
            return 0.0 if abs(x[0]) < 1e-9 else -math.inf

        with pytest.raises(ProposalTooWideError):
            metropolis_hastings(spike, [0.0], 1.0, 1_000, stall_window=100, rng=np.random.default_rng(0))

    def test_non_finite_start_rejected(self):
        with pytest.raises(ValueError):
            metropolis_hastings(lambda x: -math.inf, [0.0], 1.0, 10)

    def test_seeded_runs_reproduce(self):
        a = metropolis_hastings(std_normal, [0.0], 1.0, 500, rng=np.random.default_rng(9))
        b = metropolis_hastings(std_normal, [0.0], 1.0, 500, rng=np.random.default_rng(9))
        c = metropolis_hastings(std_normal, [0.0], 1.0, 500, rng=np.random.default_rng(10))
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[0], c[0])


class TestPrior:
    def test_jacobian_inside_bounds(self):
        v = np.log([2.0, 3.0])
        assert HyperPrior().log_density(v) == pytest.approx(math.log(6.0))

    def test_outside_bounds(self):
        assert HyperPrior(1e-3, 1e3).log_density(np.log([1e4])) == -math.inf


class TestInitialGuess:
    def test_moment_matching_positive(self):
        d = navier_dataset([Q.W, Q.Q])
        p = initial_guess(d, NU).natural()
        assert all(v > 0 for v in p.values())
        assert p["l_x"] == pytest.approx(0.5)
        # prior var of w is A^2, of q is 384 A^2 D^2 / l^8
        assert p["A"] ** 2 == pytest.approx(np.mean(d.values[d.blocks[Q.W]] ** 2))


class TestMle:
    def test_noiseless_deflection_and_load_recover_rigidity(self):
        d = navier_dataset([Q.W, Q.Q])
        res = mle_optimize(d, initial_guess(d, NU), NU, n_restarts=2)
        assert res.params.rigidity == pytest.approx(1.0, rel=5e-3)

    def test_noiseless_all_quantities_recover_rigidity(self):
        d = navier_dataset([Q.W, Q.KAPPA_X, Q.KAPPA_Y, Q.KAPPA_XY, Q.Q])
        res = mle_optimize(d, initial_guess(d, NU), NU, n_restarts=2)
        assert res.params.rigidity == pytest.approx(1.0, rel=5e-3)

    def test_noiseless_flags_noise_at_bound(self):
        d = navier_dataset([Q.W, Q.Q])
        res = mle_optimize(d, initial_guess(d, NU), NU, n_restarts=0)
        assert res.at_bounds
        assert not res.identifiable

    def test_noisy_converges(self):
        d = navier_dataset([Q.W, Q.Q], noise_sd=0.1, seed=3)
        res = mle_optimize(d, initial_guess(d, NU), NU)
        assert res.converged
        assert res.identifiable
        assert res.gradient_norm <= 1e-3
        assert 0.7 < res.params.rigidity < 1.3

    def test_collapse_triggers_every_restart(self):
        d = navier_dataset([Q.W, Q.Q], noise_sd=0.1, seed=3)
        res = mle_optimize(d, initial_guess(d, NU), NU, n_restarts=2, rigidity_floor=1e9)
        assert res.restarts == 2
        assert res.flagged_restarts == 3
        assert res.collapsed


@pytest.fixture(scope="module")
def data():
    return navier_dataset([Q.W, Q.Q], noise_sd=0.1, seed=4)


class TestSampler:
    def test_deterministic_given_seed(self, data):
        cfg = McmcConfig(n_samples=300, n_burn=50, n_adapt=200, seed=5)
        a, b = mh_sample(data, cfg, NU), mh_sample(data, cfg, NU)
        np.testing.assert_array_equal(a.draws, b.draws)
        c = mh_sample(data, McmcConfig(n_samples=300, n_burn=50, n_adapt=200, seed=6), NU)
        assert not np.array_equal(a.draws, c.draws)

    def test_trace_shape_and_names(self, data):
        tr = mh_sample(data, McmcConfig(n_samples=200, n_burn=20, n_adapt=0), NU)
        assert tr.names == parameter_names((Q.W, Q.Q))
        assert tr.draws.shape == (200, 6)
        assert np.all(tr.draws > 0)
        assert 0.0 < tr.acceptance_rate <= 1.0
        assert mcmc_mean(tr).rigidity == pytest.approx(tr.column("D").mean())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            McmcConfig(n_samples=0)
        with pytest.raises(ValueError):
            McmcConfig(proposal_sd=(0.1, -1.0))


def small_trace():
    kinds = (Q.W,)
    draws = np.array([[1.0, 0.5, 0.5, 1.0, 0.1], [1.2, 0.5, 0.6, 1.0, 0.2], [1.2, 0.5, 0.6, 1.0, 0.2],
                      [0.9, 0.5, 0.4, 1.0, 0.15]])
    return McmcTrace(parameter_names(kinds), draws, np.array([-3.0, -2.5, -2.5, -2.8]),
                     np.array([True, True, False, True]), noise_kinds=kinds)


class TestDiagnostics:
    def test_constant_columns_degenerate(self):
        s = chain_diagnostics(small_trace(), bins=5)
        assert s.degenerate == ("l_x", "D")
        assert s.correlations[1].tolist() == [0, 0, 0, 0, 0]
        assert s.correlations[0, 0] == 1.0
        assert s.acceptance_rate == 0.75
        assert sum(s.histograms["A"][0]) == 4

    def test_empty_trace_rejected(self):
        tr = McmcTrace(["A"], np.zeros((0, 1)), np.zeros(0), np.zeros(0, bool))
        with pytest.raises(ValueError):
            chain_diagnostics(tr)


def test_trace_roundtrip(tmp_path):
    tr = small_trace()
    tr.draws[0, 0] = 1 / 3
    write_trace(tr, tmp_path / "t.csv", start_iteration=100)
    back = read_trace(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.draws, tr.draws)
    np.testing.assert_array_equal(back.log_posterior, tr.log_posterior)
    assert back.names == tr.names
    assert back.noise_kinds == (Q.W,)
    assert (tmp_path / "t.csv").read_text().splitlines()[1].startswith("100,")
