"""Squared-exponential ARD kernel and its closed-form mixed partial derivatives.

The base kernel factorizes over the two plate axes,

    k(x, x') = A**2 * g(x - x'; l_x) * g(y - y'; l_y),   g(t; l) = exp(-t**2 / 2 l**2),

so any mixed partial derivative is a product of two 1-D Gaussian derivatives.
Each 1-D derivative is a polynomial in ``u = t / l`` times ``exp(-u**2 / 2)``
scaled by a power of ``l``; :class:`PolyGaussian1D` keeps that form closed under
differentiation with respect to both the offset and the length scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

MAX_AXIS_ORDER = 8


class DerivativeOrderError(ValueError):
    """Requested derivative order is outside the supported operator algebra."""


@dataclass(frozen=True)
class KernelParams:
    """Kernel hyperparameters (amplitude, length scale in x, length scale in y).

    Stored on the log scale so that every value is strictly positive.
    """

    log_amplitude: float
    log_length_x: float
    log_length_y: float

    @classmethod
    def from_natural(cls, amplitude: float, length_x: float, length_y: float) -> KernelParams:
        if amplitude <= 0 or length_x <= 0 or length_y <= 0:
            raise ValueError("kernel hyperparameters must be strictly positive")
        return cls(float(np.log(amplitude)), float(np.log(length_x)), float(np.log(length_y)))

    @property
    def amplitude(self) -> float:
        return float(np.exp(self.log_amplitude))

    @property
    def length_x(self) -> float:
        return float(np.exp(self.log_length_x))

    @property
    def length_y(self) -> float:
        return float(np.exp(self.log_length_y))


@dataclass(frozen=True)
class DerivativeOrder:
    """Orders of differentiation: ``n_*`` on the first argument, ``m_*`` on the second."""

    n_x: int = 0
    n_y: int = 0
    m_x: int = 0
    m_y: int = 0

    def __post_init__(self):
        orders = (self.n_x, self.n_y, self.m_x, self.m_y)
        if any(int(o) != o or o < 0 for o in orders):
            raise DerivativeOrderError(f"derivative orders must be non-negative integers, got {orders}")
        if self.n_x + self.m_x > MAX_AXIS_ORDER or self.n_y + self.m_y > MAX_AXIS_ORDER:
            raise DerivativeOrderError(
                f"combined order per axis is capped at {MAX_AXIS_ORDER}, got {orders}"
            )

    @property
    def total(self) -> int:
        return self.n_x + self.n_y + self.m_x + self.m_y

    @property
    def sign(self) -> int:
        # d/dx' = -d/dtau for a stationary kernel
        return -1 if (self.m_x + self.m_y) % 2 else 1


@dataclass(frozen=True)
class PolyGaussian1D:
    """``l**(-scale_power) * p(t / l) * exp(-(t / l)**2 / 2)``.

    ``coefficients`` are the power-series coefficients of ``p`` in ascending order.
    """

    coefficients: tuple[float, ...]
    scale_power: int = 0

    def d_offset(self) -> PolyGaussian1D:
        """Derivative with respect to the offset ``t``."""
        c = np.asarray(self.coefficients, dtype=float)
        new = P.polysub(P.polyder(c), P.polymulx(c))
        return PolyGaussian1D(_trim(new), self.scale_power + 1)

    def d_length(self) -> PolyGaussian1D:
        """Derivative with respect to the length scale ``l``."""
        c = np.asarray(self.coefficients, dtype=float)
        u_dp = P.polymulx(P.polyder(c))
        u2_p = P.polymulx(P.polymulx(c))
        new = P.polyadd(P.polysub(u2_p, u_dp), -self.scale_power * c)
        return PolyGaussian1D(_trim(new), self.scale_power + 1)

    def __call__(self, t, length):
        t = np.asarray(t, dtype=float)
        u = t / length
        return P.polyval(u, np.asarray(self.coefficients)) * np.exp(-0.5 * u * u) * length ** (-self.scale_power)

    def at_zero(self) -> float:
        return self.coefficients[0]


def _trim(c) -> tuple[float, ...]:
    c = P.polytrim(np.asarray(c, dtype=float), tol=0.0)
    return tuple(float(v) for v in c)


@lru_cache(maxsize=None)
def _gaussian_derivative_forms(order: int) -> tuple[PolyGaussian1D, PolyGaussian1D]:
    if order == 0:
        base = PolyGaussian1D((1.0,), 0)
    else:
        base = _gaussian_derivative_forms(order - 1)[0].d_offset()
    return base, base.d_length()


def gaussian_derivative_form(order: int) -> PolyGaussian1D:
    """Polynomial-times-Gaussian form of ``d^n/dt^n exp(-t**2 / 2 l**2)``."""
    _check_order(order)
    return _gaussian_derivative_forms(order)[0]


def _check_order(order):
    if int(order) != order or order < 0 or order > MAX_AXIS_ORDER:
        raise DerivativeOrderError(f"1-D derivative order must be in [0, {MAX_AXIS_ORDER}], got {order}")


def hermite_e(n: int, u):
    """Probabilists' Hermite polynomial He_n evaluated at ``u`` (three-term recursion)."""
    u = np.asarray(u, dtype=float)
    h_prev, h = np.ones_like(u), u.copy()
    if n == 0:
        return h_prev
    for k in range(1, n):
        h_prev, h = h, u * h - k * h_prev
    return h


def gaussian_derivative_1d(n: int, tau, length: float):
    """n-th derivative of ``exp(-tau**2 / 2 l**2)`` with respect to ``tau``.

    Equal to ``(-1)**n * l**(-n) * He_n(tau / l) * exp(-tau**2 / 2 l**2)``.
    """
    _check_order(n)
    return gaussian_derivative_form(n)(tau, length)


def gaussian_derivative_1d_dlength(n: int, tau, length: float):
    """Derivative of :func:`gaussian_derivative_1d` with respect to the length scale."""
    _check_order(n)
    return _gaussian_derivative_forms(n)[1](tau, length)


def base_kernel(x, x_prime, theta: KernelParams):
    """``A**2 exp(-dx**2 / 2 l_x**2 - dy**2 / 2 l_y**2)``; points are ``(..., 2)`` arrays."""
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    dx = (x[..., 0] - x_prime[..., 0]) / theta.length_x
    dy = (x[..., 1] - x_prime[..., 1]) / theta.length_y
    return theta.amplitude ** 2 * np.exp(-0.5 * (dx * dx + dy * dy))


def mixed_partial(order: DerivativeOrder, x, x_prime, theta: KernelParams):
    """Mixed partial derivative of the base kernel in both arguments."""
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    tx = x[..., 0] - x_prime[..., 0]
    ty = x[..., 1] - x_prime[..., 1]
    gx = gaussian_derivative_1d(order.n_x + order.m_x, tx, theta.length_x)
    gy = gaussian_derivative_1d(order.n_y + order.m_y, ty, theta.length_y)
    return order.sign * theta.amplitude ** 2 * gx * gy


def mixed_partial_param_gradient(order: DerivativeOrder, x, x_prime, theta: KernelParams):
    """Gradient of :func:`mixed_partial` with respect to ``(A, l_x, l_y)`` (natural scale).

    Returns an array with a leading axis of length 3.
    """
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    tx = x[..., 0] - x_prime[..., 0]
    ty = x[..., 1] - x_prime[..., 1]
    kx, ky = order.n_x + order.m_x, order.n_y + order.m_y
    a2 = order.sign * theta.amplitude ** 2
    gx = gaussian_derivative_1d(kx, tx, theta.length_x)
    gy = gaussian_derivative_1d(ky, ty, theta.length_y)
    dgx = gaussian_derivative_1d_dlength(kx, tx, theta.length_x)
    dgy = gaussian_derivative_1d_dlength(ky, ty, theta.length_y)
    value = a2 * gx * gy
    return np.stack([2.0 * value / theta.amplitude, a2 * dgx * gy, a2 * gx * dgy])


class AxisFactors:
    """1-D Gaussian derivative factors of every order on a fixed offset array.

    Used by the matrix assembly: the Hermite values are produced once by the
    three-term recursion and shared by every covariance block.  Agrees with the
    :class:`PolyGaussian1D` forms to rounding.
    """

    def __init__(self, tau: np.ndarray, length: float):
        self.tau = tau
        self.length = length
        self._u = tau / length
        self._gauss = np.exp(-0.5 * self._u * self._u)
        self._hermite = [np.ones_like(self._u), self._u]
        self._values: dict[int, np.ndarray] = {}
        self._dlength: dict[int, np.ndarray] = {}

    def _he(self, n: int) -> np.ndarray:
        while len(self._hermite) <= n:
            k = len(self._hermite) - 1
            self._hermite.append(self._u * self._hermite[k] - k * self._hermite[k - 1])
        return self._hermite[n]

    def value(self, order: int) -> np.ndarray:
        out = self._values.get(order)
        if out is None:
            _check_order(order)
            scale = (-1.0 / self.length) ** order
            out = scale * self._he(order) * self._gauss
            self._values[order] = out
        return out

    def dlength(self, order: int) -> np.ndarray:
        out = self._dlength.get(order)
        if out is None:
            _check_order(order)
            u = self._u
            bracket = (u * u - order) * self._he(order)
            if order:
                bracket = bracket - order * u * self._he(order - 1)
            out = (-1.0) ** order * self.length ** (-order - 1) * bracket * self._gauss
            self._dlength[order] = out
        return out
