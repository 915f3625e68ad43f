"""Kirchhoff-Love plate operators and the physics-informed cross-covariances.

Every plate quantity is a linear differential operator applied to the
deflection ``w``.  The covariance between quantity ``a`` at ``x`` and quantity
``b`` at ``x'`` is ``L_a[x] L_b[x'] k_ww(x, x')``; it is built here by expanding
both operators term by term onto the mixed partials of the base kernel, so no
pairwise formula is written out by hand.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernel import AxisFactors, DerivativeOrder, KernelParams, mixed_partial, mixed_partial_param_gradient


class QuantityKind(str, enum.Enum):
    """The twelve plate quantities in covariance block order."""

    W = "w"
    R_X = "r_x"
    R_Y = "r_y"
    KAPPA_X = "kappa_x"
    KAPPA_Y = "kappa_y"
    KAPPA_XY = "kappa_xy"
    Q = "q"
    Q_X = "Q_x"
    Q_Y = "Q_y"
    M_X = "M_x"
    M_Y = "M_y"
    M_XY = "M_xy"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]

    @property
    def carries_rigidity(self) -> bool:
        return self in RIGIDITY_KINDS

    @classmethod
    def parse(cls, name: str) -> QuantityKind:
        try:
            return cls(name)
        except ValueError:
            aliases = {k.name.lower(): k for k in cls}
            aliases.update({"kx": cls.KAPPA_X, "ky": cls.KAPPA_Y, "kxy": cls.KAPPA_XY})
            if name.lower() in aliases:
                return aliases[name.lower()]
            raise ValueError(f"unknown plate quantity {name!r}") from None

    def __str__(self) -> str:
        return self.value


_KIND_ORDER = {k: i for i, k in enumerate(QuantityKind)}
RIGIDITY_FREE_KINDS = frozenset(
    {QuantityKind.W, QuantityKind.R_X, QuantityKind.R_Y, QuantityKind.KAPPA_X, QuantityKind.KAPPA_Y, QuantityKind.KAPPA_XY}
)
RIGIDITY_KINDS = frozenset(set(QuantityKind) - RIGIDITY_FREE_KINDS)


@dataclass(frozen=True)
class Term:
    """``(c0 + c1 * nu) * D**d_power * d^(order_x + order_y) / dx^order_x dy^order_y``."""

    coefficient: tuple[float, float]
    d_power: int
    order_x: int
    order_y: int

    def coef(self, nu: float) -> float:
        return self.coefficient[0] + self.coefficient[1] * nu


@dataclass(frozen=True)
class DiffOperator:
    terms: tuple[Term, ...]

    @property
    def d_power(self) -> int:
        return self.terms[0].d_power

    @property
    def max_order(self) -> int:
        return max(t.order_x + t.order_y for t in self.terms)

    def apply(self, derivative, rigidity: float, nu: float):
        """Apply to a field given ``derivative(order_x, order_y)`` of its deflection."""
        return sum(t.coef(nu) * rigidity ** t.d_power * derivative(t.order_x, t.order_y) for t in self.terms)


def _op(*terms) -> DiffOperator:
    return DiffOperator(tuple(Term(*t) for t in terms))


_OPERATORS = {
    QuantityKind.W: _op(((1.0, 0.0), 0, 0, 0)),
    QuantityKind.R_X: _op(((1.0, 0.0), 0, 1, 0)),
    QuantityKind.R_Y: _op(((1.0, 0.0), 0, 0, 1)),
    QuantityKind.KAPPA_X: _op(((-1.0, 0.0), 0, 2, 0)),
    QuantityKind.KAPPA_Y: _op(((-1.0, 0.0), 0, 0, 2)),
    QuantityKind.KAPPA_XY: _op(((-2.0, 0.0), 0, 1, 1)),
    QuantityKind.Q: _op(((1.0, 0.0), 1, 4, 0), ((2.0, 0.0), 1, 2, 2), ((1.0, 0.0), 1, 0, 4)),
    QuantityKind.Q_X: _op(((-1.0, 0.0), 1, 3, 0), ((-1.0, 0.0), 1, 1, 2)),
    QuantityKind.Q_Y: _op(((-1.0, 0.0), 1, 2, 1), ((-1.0, 0.0), 1, 0, 3)),
    QuantityKind.M_X: _op(((-1.0, 0.0), 1, 2, 0), ((0.0, -1.0), 1, 0, 2)),
    QuantityKind.M_Y: _op(((-1.0, 0.0), 1, 0, 2), ((0.0, -1.0), 1, 2, 0)),
    QuantityKind.M_XY: _op(((1.0, -1.0), 1, 1, 1)),
}


def operator_for(kind: QuantityKind) -> DiffOperator:
    return _OPERATORS[QuantityKind(kind)]


@dataclass(frozen=True)
class PlateConstants:
    rigidity: float
    poisson: float = 0.3

    def __post_init__(self):
        if not self.rigidity > 0:
            raise ValueError(f"flexural rigidity must be positive, got {self.rigidity}")
        if not 0.0 <= self.poisson < 0.5:
            raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {self.poisson}")


@lru_cache(maxsize=None)
def block_expansion(a: QuantityKind, b: QuantityKind, nu: float) -> tuple[int, tuple[tuple[int, int, float], ...]]:
    """Collapse ``L_a L_b'`` onto per-axis total orders.

    Returns the rigidity power of the block and a tuple of
    ``(order_x, order_y, coefficient)`` where the coefficient already contains
    the sign from differentiating the second argument.
    """
    op_a, op_b = operator_for(a), operator_for(b)
    collected: dict[tuple[int, int], float] = {}
    for ta in op_a.terms:
        for tb in op_b.terms:
            sign = -1.0 if (tb.order_x + tb.order_y) % 2 else 1.0
            key = (ta.order_x + tb.order_x, ta.order_y + tb.order_y)
            collected[key] = collected.get(key, 0.0) + sign * ta.coef(nu) * tb.coef(nu)
    terms = tuple((kx, ky, c) for (kx, ky), c in sorted(collected.items()) if c != 0.0)
    return op_a.d_power + op_b.d_power, terms


def cross_covariance(a, b, x, x_prime, theta: KernelParams, constants: PlateConstants):
    """Covariance between quantity ``a`` at ``x`` and quantity ``b`` at ``x_prime``."""
    op_a, op_b = operator_for(a), operator_for(b)
    nu, rig = constants.poisson, constants.rigidity
    total = 0.0
    for ta in op_a.terms:
        for tb in op_b.terms:
            order = DerivativeOrder(ta.order_x, ta.order_y, tb.order_x, tb.order_y)
            scale = ta.coef(nu) * tb.coef(nu) * rig ** (ta.d_power + tb.d_power)
            total = total + scale * mixed_partial(order, x, x_prime, theta)
    return total


def cross_covariance_d_gradient(a, b, x, x_prime, theta: KernelParams, constants: PlateConstants):
    """Derivative of :func:`cross_covariance` with respect to the rigidity."""
    power = operator_for(a).d_power + operator_for(b).d_power
    if power == 0:
        return np.zeros_like(np.asarray(cross_covariance(a, b, x, x_prime, theta, constants), dtype=float))
    return power * cross_covariance(a, b, x, x_prime, theta, constants) / constants.rigidity


def cross_covariance_param_gradient(a, b, x, x_prime, theta: KernelParams, constants: PlateConstants):
    """Gradient of :func:`cross_covariance` with respect to ``(A, l_x, l_y, D)``."""
    op_a, op_b = operator_for(a), operator_for(b)
    nu, rig = constants.poisson, constants.rigidity
    kernel_grad = 0.0
    for ta in op_a.terms:
        for tb in op_b.terms:
            order = DerivativeOrder(ta.order_x, ta.order_y, tb.order_x, tb.order_y)
            scale = ta.coef(nu) * tb.coef(nu) * rig ** (ta.d_power + tb.d_power)
            kernel_grad = kernel_grad + scale * mixed_partial_param_gradient(order, x, x_prime, theta)
    d_grad = cross_covariance_d_gradient(a, b, x, x_prime, theta, constants)
    return np.concatenate([np.asarray(kernel_grad), np.asarray(d_grad)[None, ...]], axis=0)


class BlockEvaluator:
    """Evaluates covariance blocks between two point sets at fixed hyperparameters.

    The 1-D factors are cached per offset array, so all blocks sharing the same
    point sets reuse them.
    """

    def __init__(self, theta: KernelParams, rigidity: float, nu: float):
        self.theta = theta
        self.rigidity = rigidity
        self.nu = nu
        self.amp2 = theta.amplitude ** 2

    def factors(self, xa: np.ndarray, xb: np.ndarray) -> tuple[AxisFactors, AxisFactors]:
        tx = xa[:, 0][:, None] - xb[:, 0][None, :]
        ty = xa[:, 1][:, None] - xb[:, 1][None, :]
        return AxisFactors(tx, self.theta.length_x), AxisFactors(ty, self.theta.length_y)

    def block(self, a: QuantityKind, b: QuantityKind, fx: AxisFactors, fy: AxisFactors,
              gradient: bool = False, rows=slice(None), cols=slice(None)):
        """Covariance block and, optionally, its gradients w.r.t. ``(A, l_x, l_y, D)``.

        ``rows``/``cols`` select a sub-block of the cached factor arrays.
        """
        power, terms = block_expansion(a, b, self.nu)
        scale = self.amp2 * self.rigidity ** power
        idx = (rows, cols)
        value = np.zeros_like(fx.tau[idx])
        for kx, ky, c in terms:
            value += c * fx.value(kx)[idx] * fy.value(ky)[idx]
        value *= scale
        if not gradient:
            return value
        dlx = np.zeros_like(value)
        dly = np.zeros_like(value)
        for kx, ky, c in terms:
            dlx += c * fx.dlength(kx)[idx] * fy.value(ky)[idx]
            dly += c * fx.value(kx)[idx] * fy.dlength(ky)[idx]
        grads = (
            2.0 * value / self.theta.amplitude,
            scale * dlx,
            scale * dly,
            power * value / self.rigidity if power else np.zeros_like(value),
        )
        return value, grads
