"""Predictive posteriors of plate quantities, at fixed hyperparameters or mixed over MCMC draws."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, special

from .inference import McmcTrace
from .model import (
    JITTER_MAX,
    JITTER_START,
    Dataset,
    ExtendedHyperparams,
    check_domain,
    cross_matrix,
    noise_diagonal,
    assemble_covariance,
    factorize,
)
from .operators import QuantityKind

FIELD_COLUMNS = ("x", "y", "quantity", "mean", "variance", "q005", "q995")
BAND = (0.005, 0.995)


@dataclass(frozen=True)
class Targets:
    """Prediction targets: one quantity per point."""

    points: np.ndarray
    kinds: tuple[QuantityKind, ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kinds", tuple(QuantityKind(k) for k in self.kinds))
        if len(self.kinds) != len(pts):
            raise ValueError("need one quantity per target point")

    @classmethod
    def grid(cls, points, kinds: Sequence[QuantityKind]) -> Targets:
        """Every quantity in ``kinds`` at every point, quantity-major."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        kinds = [QuantityKind(k) for k in kinds]
        return cls(np.tile(pts, (len(kinds), 1)), tuple(k for k in kinds for _ in range(len(pts))))

    def __len__(self) -> int:
        return len(self.kinds)


@dataclass
class PredictiveSummary:
    points: np.ndarray
    kinds: tuple[QuantityKind, ...]
    mean: np.ndarray
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def select(self, kind: QuantityKind) -> PredictiveSummary:
        mask = np.array([k is QuantityKind(kind) for k in self.kinds])
        return PredictiveSummary(self.points[mask], tuple(k for k, m in zip(self.kinds, mask) if m),
                                 self.mean[mask], self.variance[mask], self.lower[mask], self.upper[mask])


def prior_variance(kinds: Sequence[QuantityKind], params: ExtendedHyperparams, nu: float) -> np.ndarray:
    """``k_aa(x, x)`` per target; stationary, so one evaluation per quantity."""
    origin = np.zeros((1, 2))
    cache = {k: float(cross_matrix([k], origin, [k], origin, params, nu)[0, 0]) for k in set(kinds)}
    return np.array([cache[k] for k in kinds])


class _Conditioner:
    """One factorization of ``K + E + eps I`` shared by every target."""

    def __init__(self, data: Dataset, params: ExtendedHyperparams, nu: float,
                 jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX):
        self.data, self.params, self.nu = data, params, nu
        K = assemble_covariance(data, params, nu)
        K[np.diag_indices_from(K)] += noise_diagonal(data, params)
        self.chol, self.jitter = factorize(K, jitter_start, jitter_max, params)
        self.alpha = linalg.cho_solve(self.chol, data.values, check_finite=False)

    def predict(self, targets: Targets):
        ks = cross_matrix(targets.kinds, targets.points, self.data.kinds, self.data.points, self.params, self.nu)
        mean = ks @ self.alpha
        L = np.tril(self.chol[0])
        v = linalg.solve_triangular(L, ks.T, lower=True, check_finite=False)
        var = prior_variance(targets.kinds, self.params, self.nu) - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)


def predictive_posterior(data: Dataset, params: ExtendedHyperparams, nu: float, targets: Targets,
                         jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX):
    """Posterior mean and marginal variance of each target at fixed hyperparameters.

    Negative variances from rounding are clipped to zero.
    """
    if data.domain is not None:
        check_domain(targets.points, data.domain)
    return _Conditioner(data, params, nu, jitter_start, jitter_max).predict(targets)


def mixture_quantiles(means: np.ndarray, variances: np.ndarray, probs: Sequence[float],
                      tol: float = 1e-6, max_iter: int = 200) -> np.ndarray:
    """Quantiles of equal-weight Gaussian mixtures by bisection on the mixture CDF.

    ``means``/``variances`` have shape ``(n_components, n_points)``; returns
    ``(len(probs), n_points)``.  Bisection stops once the CDF is within
    ``tol`` of the target probability or the bracket collapses to rounding.
    """
    means = np.atleast_2d(means)
    sd = np.sqrt(np.maximum(np.atleast_2d(variances), 0.0))
    spread = np.maximum(sd.max(axis=0), 1e-300)
    lo0 = (means - 10.0 * sd).min(axis=0) - spread
    hi0 = (means + 10.0 * sd).max(axis=0) + spread

    def cdf(x):
        z = x[None, :] - means
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(sd > 0, z / np.where(sd > 0, sd, 1.0), np.where(z >= 0, np.inf, -np.inf))
        return special.ndtr(u).mean(axis=0)

    out = np.empty((len(probs), means.shape[1]))
    for i, p in enumerate(probs):
        lo, hi = lo0.copy(), hi0.copy()
        mid = 0.5 * (lo + hi)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            f = cdf(mid)
            done = (np.abs(f - p) <= tol) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(np.abs(mid), 1e-300))
            below = f < p
            lo = np.where(below & ~done, mid, lo)
            hi = np.where(~below & ~done, mid, hi)
            if done.all():
                break
        out[i] = mid
    return out


def summarize_mixture(points, kinds, means: np.ndarray, variances: np.ndarray) -> PredictiveSummary:
    """Law of total variance plus mixture quantile band over per-draw Gaussians."""
    means = np.atleast_2d(means)
    variances = np.atleast_2d(variances)
    mix_mean = means.mean(axis=0)
    mix_var = variances.mean(axis=0) + means.var(axis=0)
    lower, upper = mixture_quantiles(means, variances, BAND)
    # the band must contain the mean even when bisection stops one tolerance short
    lower = np.minimum(lower, mix_mean)
    upper = np.maximum(upper, mix_mean)
    return PredictiveSummary(np.asarray(points), tuple(kinds), mix_mean, mix_var, lower, upper)


def fixed_summary(data: Dataset, params: ExtendedHyperparams, nu: float, targets: Targets) -> PredictiveSummary:
    """Single-draw summary: Gaussian band around the fixed-hyperparameter prediction."""
    mean, var = predictive_posterior(data, params, nu, targets)
    return summarize_mixture(targets.points, targets.kinds, mean[None], var[None])


def mc_predictive(data: Dataset, trace: McmcTrace, nu: float, targets: Targets, stride: int = 10,
                  jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX) -> PredictiveSummary:
    """Predictive mixture over every ``stride``-th retained draw."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    picks = range(0, len(trace), stride)
    if len(picks) == 0:
        raise ValueError("no draws left after thinning")
    if data.domain is not None:
        check_domain(targets.points, data.domain)
    means = np.empty((len(picks), len(targets)))
    variances = np.empty_like(means)
    cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
    for row, i in enumerate(picks):
        key = trace.draws[i].tobytes()
        if key not in cache:  # rejected proposals repeat the previous draw
            cache = {key: _Conditioner(data, trace.params(i), nu, jitter_start, jitter_max).predict(targets)}
        means[row], variances[row] = cache[key]
    return summarize_mixture(targets.points, targets.kinds, means, variances)


def write_fields(path, summary: PredictiveSummary) -> None:
    """Delimited field export, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_COLUMNS)
        for p, k, m, v, lo, hi in zip(summary.points, summary.kinds, summary.mean, summary.variance,
                                      summary.lower, summary.upper):
            w.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", str(k), f"{m:.17g}", f"{v:.17g}", f"{lo:.17g}", f"{hi:.17g}"])


def read_fields(path) -> PredictiveSummary:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    col = lambda name: np.array([float(r[name]) for r in rows])  # noqa: E731
    return PredictiveSummary(pts, tuple(QuantityKind(r["quantity"]) for r in rows),
                             col("mean"), col("variance"), col("q005"), col("q995"))
