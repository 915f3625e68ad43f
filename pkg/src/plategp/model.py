"""Heterogeneous observation sets, block covariance assembly and the marginal likelihood."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .kernel import KernelParams
from .operators import BlockEvaluator, QuantityKind

JITTER_START = 1e-10
JITTER_MAX = 1e-5
BC_KINDS = frozenset({QuantityKind.W, QuantityKind.R_X, QuantityKind.R_Y})


class NoiseClass(str, enum.Enum):
    NOISY = "noisy"
    NOISELESS_BC = "noiseless_bc"

    def __str__(self) -> str:
        return self.value


class DomainError(ValueError):
    """A location lies outside the plate domain."""


class IllConditionedError(np.linalg.LinAlgError):
    """Covariance could not be factorized even at the maximum jitter."""

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


@dataclass(frozen=True)
class Observation:
    x: float
    y: float
    kind: QuantityKind
    value: float
    noise_class: NoiseClass = NoiseClass.NOISY

    def __post_init__(self):
        object.__setattr__(self, "kind", QuantityKind(self.kind))
        object.__setattr__(self, "noise_class", NoiseClass(self.noise_class))
        if self.noise_class is NoiseClass.NOISELESS_BC and self.kind not in BC_KINDS:
            raise ValueError(f"noiseless boundary observations are limited to w, r_x, r_y; got {self.kind}")


class Dataset:
    """Observations grouped into contiguous per-quantity blocks.

    Blocks follow the fixed quantity order (w, r_x, r_y, kappa_x, ..., M_xy);
    within a block the input order is preserved.
    """

    def __init__(self, observations: Iterable[Observation], domain: tuple[float, float] | None = None):
        obs = sorted(observations, key=lambda o: o.kind.order)
        self.observations: tuple[Observation, ...] = tuple(obs)
        self.domain = domain
        self.points = np.array([(o.x, o.y) for o in obs], dtype=float).reshape(-1, 2)
        self.values = np.array([o.value for o in obs], dtype=float)
        self.kinds = tuple(o.kind for o in obs)
        self.noisy = np.array([o.noise_class is NoiseClass.NOISY for o in obs], dtype=bool)
        self.blocks: dict[QuantityKind, slice] = {}
        start = 0
        for i in range(1, len(obs) + 1):
            if i == len(obs) or obs[i].kind != obs[start].kind:
                self.blocks[obs[start].kind] = slice(start, i)
                start = i
        if domain is not None:
            check_domain(self.points, domain)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def noise_kinds(self) -> tuple[QuantityKind, ...]:
        """Quantities with at least one noisy observation, in block order."""
        return tuple(k for k, s in self.blocks.items() if self.noisy[s].any())

    @property
    def can_learn_rigidity(self) -> bool:
        kinds = set(self.blocks)
        return any(k.carries_rigidity for k in kinds) and any(not k.carries_rigidity for k in kinds)

    def extend(self, observations: Iterable[Observation]) -> Dataset:
        return Dataset(list(self.observations) + list(observations), self.domain)

    def subset(self, kinds: Iterable[QuantityKind]) -> Dataset:
        kinds = {QuantityKind(k) for k in kinds}
        return Dataset([o for o in self.observations if o.kind in kinds], self.domain)


def check_domain(points: np.ndarray, domain: tuple[float, float], tol: float = 1e-12) -> None:
    a, b = domain
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    bad = (pts[:, 0] < -tol) | (pts[:, 0] > a + tol) | (pts[:, 1] < -tol) | (pts[:, 1] > b + tol)
    if bad.any():
        raise DomainError(f"{int(bad.sum())} location(s) outside the plate domain [0, {a}] x [0, {b}]")


@dataclass(frozen=True)
class ExtendedHyperparams:
    """Kernel hyperparameters, rigidity and per-quantity noise variances (all log scale)."""

    log_amplitude: float
    log_length_x: float
    log_length_y: float
    log_rigidity: float
    log_noise: dict = field(default_factory=dict)

    @classmethod
    def from_natural(cls, amplitude, length_x, length_y, rigidity, noise=None) -> ExtendedHyperparams:
        noise = noise or {}
        vals = [amplitude, length_x, length_y, rigidity, *noise.values()]
        if any(not v > 0 for v in vals):
            raise ValueError("all extended hyperparameters must be strictly positive")
        return cls(
            math.log(amplitude), math.log(length_x), math.log(length_y), math.log(rigidity),
            {QuantityKind(k): math.log(v) for k, v in noise.items()},
        )

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.log_amplitude, self.log_length_x, self.log_length_y)

    @property
    def rigidity(self) -> float:
        return math.exp(self.log_rigidity)

    def noise_variance(self, kind: QuantityKind) -> float:
        return math.exp(self.log_noise[QuantityKind(kind)])

    def to_vector(self, noise_kinds: Sequence[QuantityKind]) -> np.ndarray:
        missing = [k for k in noise_kinds if k not in self.log_noise]
        if missing:
            raise KeyError(f"no noise variance for observed quantities {[str(k) for k in missing]}")
        return np.array(
            [self.log_amplitude, self.log_length_x, self.log_length_y, self.log_rigidity]
            + [self.log_noise[k] for k in noise_kinds]
        )

    @classmethod
    def from_vector(cls, vec, noise_kinds: Sequence[QuantityKind]) -> ExtendedHyperparams:
        vec = [float(v) for v in vec]
        return cls(vec[0], vec[1], vec[2], vec[3], dict(zip(noise_kinds, vec[4:])))

    def natural(self) -> dict[str, float]:
        out = {"A": math.exp(self.log_amplitude), "l_x": math.exp(self.log_length_x),
               "l_y": math.exp(self.log_length_y), "D": self.rigidity}
        for k, v in self.log_noise.items():
            out[f"sigma2_{k}"] = math.exp(v)
        return out

    def with_rigidity(self, rigidity: float) -> ExtendedHyperparams:
        return replace(self, log_rigidity=math.log(rigidity))


def parameter_names(noise_kinds: Sequence[QuantityKind]) -> list[str]:
    return ["A", "l_x", "l_y", "D"] + [f"sigma2_{k}" for k in noise_kinds]


def cross_matrix(kinds_a, points_a, kinds_b, points_b, params: ExtendedHyperparams, nu: float) -> np.ndarray:
    """Covariance between two heterogeneous point sets given per-row quantity labels.

    Rows with the same quantity must be contiguous (as in :class:`Dataset`).
    """
    ev = BlockEvaluator(params.kernel, params.rigidity, nu)
    ra, rb = _runs(kinds_a), _runs(kinds_b)
    out = np.empty((len(kinds_a), len(kinds_b)))
    ua, ia = np.unique(np.asarray(points_a, dtype=float).reshape(-1, 2), axis=0, return_inverse=True)
    ub, ib = np.unique(np.asarray(points_b, dtype=float).reshape(-1, 2), axis=0, return_inverse=True)
    ia, ib = ia.reshape(-1), ib.reshape(-1)
    fx, fy = ev.factors(ua, ub)
    for ka, sa in ra:
        for kb, sb in rb:
            out[sa, sb] = ev.block(ka, kb, fx, fy)[np.ix_(ia[sa], ib[sb])]
    return out


def _runs(kinds) -> list[tuple[QuantityKind, slice]]:
    runs, start = [], 0
    for i in range(1, len(kinds) + 1):
        if i == len(kinds) or kinds[i] != kinds[start]:
            runs.append((kinds[start], slice(start, i)))
            start = i
    return runs


def assemble_covariance(data: Dataset, params: ExtendedHyperparams, nu: float, gradient: bool = False):
    """Block covariance matrix ``K`` over the observation set.

    Only the upper block triangle is evaluated; the lower triangle is its
    mirror, so ``K`` is exactly symmetric.  With ``gradient=True`` also returns
    ``dK/d(A, l_x, l_y, D)`` on the natural scale.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if data.domain is not None:
        check_domain(data.points, data.domain)
    n = len(data)
    K = np.zeros((n, n))
    dK = np.zeros((4, n, n)) if gradient else None
    ev = BlockEvaluator(params.kernel, params.rigidity, nu)
    # quantities are usually observed on a shared grid: evaluate each block on
    # the unique locations and scatter
    unique, inverse = np.unique(data.points, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    fx, fy = ev.factors(unique, unique)
    items = list(data.blocks.items())
    for i, (ka, sa) in enumerate(items):
        for kb, sb in items[i:]:
            blk = ev.block(ka, kb, fx, fy, gradient=gradient)
            value, grads = blk if gradient else (blk, ())
            idx = np.ix_(inverse[sa], inverse[sb])
            K[sa, sb] = value[idx]
            for j, g in enumerate(grads):
                dK[j][sa, sb] = g[idx]
    K = _mirror_upper(K)
    if gradient:
        dK = np.stack([_mirror_upper(g) for g in dK])
        return K, dK
    return K


def _mirror_upper(m: np.ndarray) -> np.ndarray:
    upper = np.triu(m)
    return upper + np.triu(m, 1).T


def noise_diagonal(data: Dataset, params: ExtendedHyperparams) -> np.ndarray:
    """Per-row measurement noise variance (zero for noiseless boundary rows)."""
    diag = np.zeros(len(data))
    for kind in data.noise_kinds:
        if kind not in params.log_noise:
            raise KeyError(f"no noise variance for observed quantity {kind}")
        s = data.blocks[kind]
        diag[s] = np.where(data.noisy[s], params.noise_variance(kind), 0.0)
    return diag


def assemble_noise(data: Dataset, params: ExtendedHyperparams, jitter: float = 0.0) -> np.ndarray:
    """Diagonal noise matrix ``E`` with ``jitter`` added to every diagonal entry."""
    return np.diag(noise_diagonal(data, params) + jitter)


def factorize(matrix: np.ndarray, jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX, params=None):
    """Cholesky factor of ``matrix + eps I`` with escalating ``eps``.

    Starts at ``jitter_start`` and multiplies by 10 until the factorization
    succeeds; gives up past ``jitter_max``.  Returns ``(cho_factor, eps)``.
    """
    eps = jitter_start
    if not np.all(np.isfinite(matrix)):
        raise IllConditionedError("covariance contains non-finite entries", params)
    while True:
        try:
            c = linalg.cho_factor(matrix + eps * np.eye(len(matrix)), lower=True, check_finite=False)
            if np.all(np.diag(c[0]) > 0):
                return c, eps
        except linalg.LinAlgError:
            pass
        eps *= 10.0
        if eps > jitter_max * (1 + 1e-9):
            raise IllConditionedError(
                f"covariance not positive definite with jitter up to {jitter_max:g}", params
            )


@dataclass
class LikelihoodEval:
    value: float
    gradient: np.ndarray | None
    jitter: float


def evaluate_likelihood(data: Dataset, params: ExtendedHyperparams, nu: float, gradient: bool = False,
                        jitter_start: float = JITTER_START, jitter_max: float = JITTER_MAX) -> LikelihoodEval:
    """Log marginal likelihood (and its log-space gradient) in one factorization."""
    noise_kinds = data.noise_kinds
    if gradient:
        K, dK = assemble_covariance(data, params, nu, gradient=True)
    else:
        K = assemble_covariance(data, params, nu)
    Ky = K + np.diag(noise_diagonal(data, params))
    c, eps = factorize(Ky, jitter_start, jitter_max, params)
    z = data.values
    alpha = linalg.cho_solve(c, z, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    n = len(z)
    value = -0.5 * z @ alpha - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)
    if not gradient:
        return LikelihoodEval(float(value), None, eps)
    Kinv = linalg.cho_solve(c, np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv
    natural = np.array([params.kernel.amplitude, params.kernel.length_x, params.kernel.length_y, params.rigidity])
    grad = np.empty(4 + len(noise_kinds))
    for j in range(4):
        grad[j] = 0.5 * np.sum(W * dK[j]) * natural[j]
    wd = np.diag(W)
    for j, kind in enumerate(noise_kinds):
        s = data.blocks[kind]
        grad[4 + j] = 0.5 * np.sum(wd[s][data.noisy[s]]) * params.noise_variance(kind)
    return LikelihoodEval(float(value), grad, eps)


def log_marginal_likelihood(data: Dataset, params: ExtendedHyperparams, nu: float) -> float:
    return evaluate_likelihood(data, params, nu).value


def lml_gradient(data: Dataset, params: ExtendedHyperparams, nu: float) -> np.ndarray:
    """Gradient w.r.t. ``(log A, log l_x, log l_y, log D, log sigma2_k...)``."""
    return evaluate_likelihood(data, params, nu, gradient=True).gradient
