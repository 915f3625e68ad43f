"""Learning the extended hyperparameters: gradient-based MLE and Metropolis-Hastings."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .model import (
    JITTER_MAX,
    JITTER_START,
    Dataset,
    ExtendedHyperparams,
    IllConditionedError,
    cross_matrix,
    evaluate_likelihood,
    parameter_names,
)
from .operators import QuantityKind

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = (1e-12, 1e12)


class ProposalTooWideError(RuntimeError):
    """The random walk accepted nothing over a whole stall window."""


@dataclass(frozen=True)
class HyperPrior:
    """Uniform prior on the natural scale inside ``[lower, upper]`` per component.

    Sampling happens in log space, so the log density carries the Jacobian
    ``sum(log theta)``.
    """

    lower: float = DEFAULT_BOUNDS[0]
    upper: float = DEFAULT_BOUNDS[1]

    def log_bounds(self):
        return math.log(self.lower), math.log(self.upper)

    def log_density(self, log_theta: np.ndarray) -> float:
        lo, hi = self.log_bounds()
        if np.any(log_theta < lo) or np.any(log_theta > hi):
            return -math.inf
        return float(np.sum(log_theta))


def initial_guess(data: Dataset, nu: float, length_fraction: float = 0.5, noise_fraction: float = 0.1) -> ExtendedHyperparams:
    """Moment-matched starting point.

    Length scales are a fraction of the plate span (or of the data extent);
    the amplitude and rigidity match the prior variance of each observed block
    to the sample variance of its data; noise variances start at
    ``(noise_fraction * std)^2`` of each block.
    """
    if data.domain is not None:
        span = np.asarray(data.domain, dtype=float)
    else:
        span = np.ptp(data.points, axis=0)
        span = np.where(span > 0, span, 1.0)
    lx, ly = length_fraction * span
    unit = ExtendedHyperparams.from_natural(1.0, lx, ly, 1.0)
    free, carrying = [], []
    origin = np.zeros((1, 2))
    for kind, s in data.blocks.items():
        var = float(np.mean(data.values[s] ** 2))
        if var <= 0:
            continue
        prior = float(cross_matrix([kind], origin, [kind], origin, unit, nu)[0, 0])
        (carrying if kind.carries_rigidity else free).append(var / prior)
    amp2 = float(np.exp(np.mean(np.log(free)))) if free else (float(np.exp(np.mean(np.log(carrying)))) if carrying else 1.0)
    d2 = float(np.exp(np.mean(np.log(carrying)))) / amp2 if (carrying and free) else 1.0
    noise = {}
    for kind in data.noise_kinds:
        s = data.blocks[kind]
        sd = float(np.std(data.values[s]))
        if sd <= 0:
            sd = float(np.sqrt(np.mean(data.values[s] ** 2))) or 1.0
        noise[kind] = (noise_fraction * sd) ** 2
    return ExtendedHyperparams.from_natural(math.sqrt(amp2), lx, ly, math.sqrt(d2), noise)


class LogPosterior:
    """``log p(z | theta) + log p(theta)`` as a function of the log-parameter vector."""

    def __init__(self, data: Dataset, nu: float, prior: HyperPrior | None = None,
                 jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX):
        self.data = data
        self.nu = nu
        self.prior = prior or HyperPrior()
        self.noise_kinds = data.noise_kinds
        self.jitter_start = jitter_start
        self.jitter_max = jitter_max
        self.max_jitter_used = 0.0

    def params(self, vec) -> ExtendedHyperparams:
        return ExtendedHyperparams.from_vector(vec, self.noise_kinds)

    def likelihood(self, vec, gradient=False):
        ev = evaluate_likelihood(self.data, self.params(vec), self.nu, gradient=gradient,
                                 jitter_start=self.jitter_start, jitter_max=self.jitter_max)
        self.max_jitter_used = max(self.max_jitter_used, ev.jitter)
        return ev

    def __call__(self, vec) -> float:
        vec = np.asarray(vec, dtype=float)
        lp = self.prior.log_density(vec)
        if not math.isfinite(lp):
            return -math.inf
        try:
            value = self.likelihood(vec).value
        except IllConditionedError:
            return -math.inf
        if not math.isfinite(value):
            return -math.inf
        return value + lp


@dataclass
class MleResult:
    params: ExtendedHyperparams
    log_likelihood: float
    iterations: int
    converged: bool
    gradient_norm: float
    identifiable: bool = True
    at_bounds: tuple[str, ...] = ()
    collapsed: bool = False
    restarts: int = 0
    flagged_restarts: int = 0
    jitter: float = JITTER_START
    message: str = ""


def _optimize_once(post: LogPosterior, x0: np.ndarray, gtol: float, max_iter: int):
    lo, hi = post.prior.log_bounds()
    n_evals = [0]

    def objective(vec):
        n_evals[0] += 1
        try:
            ev = post.likelihood(vec, gradient=True)
        except IllConditionedError:
            return 1e300, np.zeros_like(vec)
        return -ev.value, -ev.gradient

    res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B",
                            bounds=[(lo, hi)] * len(x0),
                            options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15, "maxcor": 20})
    return res


def mle_optimize(data: Dataset, initial: ExtendedHyperparams, nu: float, *, gtol: float = 1e-5,
                 max_iter: int = 500, n_restarts: int = 5, rigidity_floor: float | None = None,
                 restart_scale: float = 0.5, seed: int = 0, prior: HyperPrior | None = None,
                 jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX) -> MleResult:
    """Maximize the log marginal likelihood over the log-parameters.

    Restarts from perturbed copies of ``initial`` when the first run does not
    converge or its rigidity falls below ``rigidity_floor``; the
    best-likelihood run among the non-collapsed ones is returned.
    """
    post = LogPosterior(data, nu, prior, jitter_start, jitter_max)
    names = parameter_names(post.noise_kinds)
    x0 = initial.to_vector(post.noise_kinds)
    lo, hi = post.prior.log_bounds()
    x0 = np.clip(x0, lo, hi)
    rng = np.random.default_rng(seed)
    runs = []
    for attempt in range(n_restarts + 1):
        start = x0 if attempt == 0 else x0 + restart_scale * rng.standard_normal(len(x0))
        start = np.clip(start, lo, hi)
        res = _optimize_once(post, start, gtol, max_iter)
        vec = res.x
        try:
            ev = post.likelihood(vec, gradient=True)
        except IllConditionedError:
            continue
        gnorm = float(np.max(np.abs(_projected_gradient(ev.gradient, vec, lo, hi))))
        converged = bool(res.success) and gnorm <= max(gtol, 1e-3)
        collapsed = rigidity_floor is not None and math.exp(vec[3]) < rigidity_floor
        runs.append((ev.value, vec, converged, collapsed, int(res.nit), gnorm, ev.jitter, str(res.message)))
        if converged and not collapsed:
            break
    if not runs:
        raise IllConditionedError("every MLE start failed to factorize", initial)
    flagged = sum(1 for r in runs if r[3])
    good = [r for r in runs if not r[3]] or runs
    best = max(good, key=lambda r: (r[2], r[0]))
    value, vec, converged, collapsed, nit, gnorm, eps, msg = best
    tol = 1e-6
    at_bounds = tuple(n for n, v in zip(names, vec) if v <= lo + tol or v >= hi - tol)
    identifiable = not at_bounds and data.can_learn_rigidity
    return MleResult(post.params(vec), value, nit, converged, gnorm, identifiable, at_bounds, collapsed,
                     len(runs) - 1, flagged, eps, msg)


def _projected_gradient(grad, vec, lo, hi):
    g = np.array(grad, dtype=float)
    g[(vec <= lo + 1e-9) & (g < 0)] = 0.0
    g[(vec >= hi - 1e-9) & (g > 0)] = 0.0
    return g


@dataclass(frozen=True)
class McmcConfig:
    n_samples: int = 20_000
    n_burn: int = 5_000
    proposal_sd: tuple[float, ...] | None = None
    initial: ExtendedHyperparams | None = None
    seed: int = 0
    n_adapt: int = 2_000
    adapt_batch: int = 100
    target_acceptance: tuple[float, float] = (0.2, 0.4)
    stall_window: int = 5_000

    def __post_init__(self):
        if self.n_samples < 1 or self.n_burn < 0 or self.n_adapt < 0:
            raise ValueError("need n_samples >= 1, n_burn >= 0, n_adapt >= 0")
        if self.proposal_sd is not None and any(not s > 0 for s in self.proposal_sd):
            raise ValueError("proposal standard deviations must be positive")


@dataclass
class McmcTrace:
    """Retained draws on the natural scale, one row per iteration."""

    names: list[str]
    draws: np.ndarray
    log_posterior: np.ndarray
    accepted: np.ndarray
    proposal_sd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    noise_kinds: tuple[QuantityKind, ...] = ()
    max_jitter: float = JITTER_START

    @property
    def n_accepted(self) -> int:
        return int(np.sum(self.accepted))

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / len(self.accepted) if len(self.accepted) else 0.0

    def params(self, i: int) -> ExtendedHyperparams:
        return ExtendedHyperparams.from_vector(np.log(self.draws[i]), self.noise_kinds)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def __len__(self) -> int:
        return len(self.draws)


def metropolis_hastings(log_target: Callable[[np.ndarray], float], x0, proposal_sd, n_samples: int,
                        n_burn: int = 0, rng=None, stall_window: int | None = None):
    """Random-walk Metropolis with independent Gaussian steps.

    Returns ``(draws, log_target_values, accepted)`` for the ``n_samples``
    iterations after ``n_burn``.  The proposal is symmetric, so the acceptance
    ratio is the target ratio.
    """
    rng = np.random.default_rng(rng) if not hasattr(rng, "normal") else rng
    x = np.array(x0, dtype=float)
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), x.shape)
    lp = log_target(x)
    if not math.isfinite(lp):
        raise ValueError("initial state has non-finite log target")
    total = n_burn + n_samples
    draws = np.empty((n_samples, len(x)))
    lps = np.empty(n_samples)
    acc = np.zeros(n_samples, dtype=bool)
    since_accept = 0
    for i in range(total):
        proposal = x + sd * rng.normal(size=len(x))
        a = rng.uniform()
        lp_new = log_target(proposal)
        took = math.isfinite(lp_new) and (lp_new >= lp or a <= math.exp(lp_new - lp))
        if took:
            x, lp = proposal, lp_new
            since_accept = 0
        else:
            since_accept += 1
            if stall_window and since_accept >= stall_window:
                raise ProposalTooWideError(
                    f"no proposal accepted in {stall_window} consecutive steps; proposal sd {sd.tolist()} too wide"
                )
        j = i - n_burn
        if j >= 0:
            draws[j] = x
            lps[j] = lp
            acc[j] = took
    return draws, lps, acc


def adapt_proposal(log_target, x0, sd0, n_adapt: int, batch: int, target=(0.2, 0.4), rng=None):
    """Tune a diagonal random-walk scale on a pre-run; returns ``(x_end, sd)``.

    Each batch rescales the step by the distance of its acceptance rate from
    the target band; from the second half on the per-coordinate shape is set
    from the empirical spread of the pre-run.  The result is frozen afterwards.
    """
    x = np.array(x0, dtype=float)
    sd = np.array(sd0, dtype=float)
    d = len(x)
    history = []
    scale = 1.0
    n_batches = max(n_adapt // batch, 0)
    mid = 0.3 * (target[0] + target[1]) / 0.6
    for k in range(n_batches):
        draws, _, acc = metropolis_hastings(log_target, x, sd * scale, batch, 0, rng)
        x = draws[-1]
        history.append(draws)
        rate = acc.mean()
        if rate < target[0] or rate > target[1]:
            scale *= math.exp(2.0 * (rate - mid))
        if k >= n_batches // 2 and k >= 2:
            recent = np.concatenate(history[len(history) // 2:])
            spread = recent.std(axis=0)
            if np.all(spread > 0):
                sd = 2.38 / math.sqrt(d) * spread
                scale = 1.0 if k == n_batches // 2 else scale
    return x, sd * scale


def mh_sample(data: Dataset, cfg: McmcConfig, nu: float, prior: HyperPrior | None = None,
              jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX) -> McmcTrace:
    """Sample the posterior of the extended hyperparameters.

    The chain runs in log space.  An optional adaptation pre-run tunes the
    proposal; its draws are discarded together with the burn-in.
    """
    post = LogPosterior(data, nu, prior, jitter_start, jitter_max)
    kinds = post.noise_kinds
    initial = cfg.initial or initial_guess(data, nu)
    x0 = initial.to_vector(kinds)
    if cfg.proposal_sd is None:
        sd = np.full(len(x0), 0.05)
    else:
        sd = np.asarray(cfg.proposal_sd, dtype=float)
        if len(sd) == 1:
            sd = np.full(len(x0), sd[0])
    rng = np.random.default_rng(cfg.seed)
    if cfg.n_adapt:
        x0, sd = adapt_proposal(post, x0, sd, cfg.n_adapt, cfg.adapt_batch, cfg.target_acceptance, rng)
    draws, lps, acc = metropolis_hastings(post, x0, sd, cfg.n_samples, cfg.n_burn, rng, cfg.stall_window)
    return McmcTrace(parameter_names(kinds), np.exp(draws), lps, acc, sd, kinds, post.max_jitter_used)


def mcmc_mean(trace: McmcTrace) -> ExtendedHyperparams:
    """Arithmetic mean of the retained natural-scale draws."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    mean = trace.draws.mean(axis=0)
    return ExtendedHyperparams.from_vector(np.log(mean), trace.noise_kinds)


@dataclass
class ChainSummary:
    acceptance_rate: float
    histograms: dict
    correlations: np.ndarray
    degenerate: tuple[str, ...]
    means: dict
    stds: dict


def chain_diagnostics(trace: McmcTrace, bins: int = 30) -> ChainSummary:
    """Acceptance rate, per-parameter histograms and pairwise correlations.

    Constant columns get zero correlation with everything and are listed as
    degenerate.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    draws = trace.draws
    std = draws.std(axis=0)
    degenerate = tuple(n for n, s in zip(trace.names, std) if not s > 0)
    d = draws.shape[1]
    corr = np.eye(d)
    ok = std > 0
    if ok.sum() > 1:
        sub = np.corrcoef(draws[:, ok], rowvar=False)
        idx = np.flatnonzero(ok)
        corr[np.ix_(idx, idx)] = np.clip(sub, -1.0, 1.0)
    corr[~ok, :] = 0.0
    corr[:, ~ok] = 0.0
    hist = {}
    for j, name in enumerate(trace.names):
        counts, edges = np.histogram(draws[:, j], bins=bins)
        hist[name] = (counts, edges)
    return ChainSummary(trace.acceptance_rate, hist, corr, degenerate,
                        dict(zip(trace.names, draws.mean(axis=0))), dict(zip(trace.names, std)))


def write_trace(trace: McmcTrace, path, start_iteration: int = 0) -> None:
    """Delimited export: iteration, parameters, log posterior."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", *trace.names, "log_posterior"])
        for i, (row, lp) in enumerate(zip(trace.draws, trace.log_posterior)):
            w.writerow([start_iteration + i, *(f"{v:.17g}" for v in row), f"{lp:.17g}"])


def read_trace(path) -> McmcTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = header[1:-1]
    arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    kinds = tuple(QuantityKind(n[len("sigma2_"):]) for n in names if n.startswith("sigma2_"))
    acc = np.r_[False, np.any(np.diff(arr[:, 1:-1], axis=0) != 0, axis=1)] if len(arr) else np.zeros(0, bool)
    return McmcTrace(names, arr[:, 1:-1], arr[:, -1], acc, noise_kinds=kinds)
