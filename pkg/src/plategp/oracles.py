"""Ground-truth plate fields.

* Navier solution of the simply supported plate under a single sine load.
* Ritz solution of the clamped plate under uniform load in the double-cosine
  basis ``(1 - cos 2 m pi x / a)(1 - cos 2 n pi y / b)``.

Every quantity is produced by applying the plate operator term-by-term to the
analytic derivatives of the deflection basis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .operators import QuantityKind, operator_for


class LoadKind(str, enum.Enum):
    SINUSOIDAL = "sinusoidal"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class PlateGeometry:
    a: float = 1.0
    b: float = 1.0
    rigidity: float = 1.0
    poisson: float = 0.3

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.rigidity > 0):
            raise ValueError("plate spans and rigidity must be positive")
        if not 0.0 <= self.poisson < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")


@dataclass(frozen=True)
class LoadSpec:
    kind: LoadKind = LoadKind.SINUSOIDAL
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LoadKind(self.kind))
        if not math.isfinite(self.amplitude):
            raise ValueError("load amplitude must be finite")


def _sin_derivative(k: int, freq: float, t):
    """k-th derivative of sin(freq * t)."""
    return freq ** k * np.sin(freq * t + 0.5 * k * np.pi)


def navier_amplitude(geom: PlateGeometry, q0: float) -> float:
    """Centre deflection of the sine-loaded simply supported plate.

    The factor ``(1/a^2 + 1/b^2)`` enters squared: substituting the deflection
    into ``D (w_xxxx + 2 w_xxyy + w_yyyy) = q`` leaves ``D pi^4 (1/a^2 + 1/b^2)^2``.
    """
    return q0 / (np.pi ** 4 * geom.rigidity * (1.0 / geom.a ** 2 + 1.0 / geom.b ** 2) ** 2)


def navier_field(geom: PlateGeometry, q0: float, kind: QuantityKind, points, load: LoadSpec | None = None):
    """Any plate quantity of the Navier solution at ``points`` (shape ``(..., 2)``)."""
    if load is not None and load.kind is not LoadKind.SINUSOIDAL:
        raise ValueError("the Navier solution is only available for the sinusoidal load")
    pts = np.asarray(points, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    fx, fy = np.pi / geom.a, np.pi / geom.b
    amp = navier_amplitude(geom, q0)

    def derivative(ox, oy):
        return amp * _sin_derivative(ox, fx, x) * _sin_derivative(oy, fy, y)

    return operator_for(kind).apply(derivative, geom.rigidity, geom.poisson)


@dataclass(frozen=True)
class RitzSolution:
    coefficients: np.ndarray  # (N_m, N_n)
    geometry: PlateGeometry
    load: LoadSpec

    @property
    def n_m(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_n(self) -> int:
        return self.coefficients.shape[1]

    def energy(self) -> float:
        """Total potential energy at the solution, ``-1/2 f.w``."""
        a, b = self.geometry.a, self.geometry.b
        return -0.5 * self.load.amplitude * a * b * float(self.coefficients.sum())


def ritz_solve(geom: PlateGeometry, q0: float, n_m: int = 200, n_n: int = 200) -> RitzSolution:
    """Ritz coefficients for the clamped plate under uniform load ``q0``.

    With ``alpha_m = 2 m pi / a`` and ``beta_n = 2 n pi / b`` the bending
    stiffness ``D * integral (lap w)^2`` of the basis is

        (D a b / 2) [ diag(alpha^4) (x) (J + I/2) + (J + I/2) (x) diag(beta^4)
                      + diag(alpha^2) (x) diag(beta^2) ]

    (``J`` the all-ones matrix), i.e. a diagonal ``(alpha^2 + beta^2)^2 / 2``
    plus the rank ``n_m + n_n`` term ``U U^T`` with
    ``U = [diag(alpha^2) (x) 1, 1 (x) diag(beta^2)]``.  The load vector is
    ``q0 a b`` for every basis function.  The system is solved with the
    Woodbury identity; the capacitance matrix ``I + U^T S^-1 U`` is SPD.
    """
    if n_m < 1 or n_n < 1:
        raise ValueError("need at least one basis function per direction")
    load = LoadSpec(LoadKind.UNIFORM, q0)
    if q0 == 0:
        return RitzSolution(np.zeros((n_m, n_n)), geom, load)
    a, b, D = geom.a, geom.b, geom.rigidity
    alpha2 = (2.0 * np.pi * np.arange(1, n_m + 1) / a) ** 2
    beta2 = (2.0 * np.pi * np.arange(1, n_n + 1) / b) ** 2
    scale = D * a * b / 2.0
    diag = 0.5 * (alpha2[:, None] + beta2[None, :]) ** 2  # (n_m, n_n)
    rhs = np.full((n_m, n_n), q0 * a * b / scale)

    # U columns: first n_m are alpha_m^2 on row-block m, next n_n are beta_n^2 on column n
    def u_t(v):
        return np.concatenate([alpha2 * v.sum(axis=1), beta2 * v.sum(axis=0)])

    def u_mul(c):
        return alpha2[:, None] * c[:n_m, None] + beta2[None, :] * c[None, n_m:]

    inv_diag = 1.0 / diag
    # capacitance C = I + U^T S^-1 U
    s_rows = inv_diag.sum(axis=1)  # sum over n
    s_cols = inv_diag.sum(axis=0)
    cap = np.zeros((n_m + n_n, n_m + n_n))
    cap[:n_m, :n_m] = np.diag(alpha2 * alpha2 * s_rows)
    cap[n_m:, n_m:] = np.diag(beta2 * beta2 * s_cols)
    cross = alpha2[:, None] * inv_diag * beta2[None, :]
    cap[:n_m, n_m:] = cross
    cap[n_m:, :n_m] = cross.T
    cap += np.eye(n_m + n_n)

    y0 = inv_diag * rhs
    corr = linalg.cho_solve(linalg.cho_factor(cap, lower=True), u_t(y0))
    w = y0 - inv_diag * u_mul(corr)
    return RitzSolution(w, geom, load)


def _one_minus_cos_derivative(k: int, freq: np.ndarray, t: np.ndarray) -> np.ndarray:
    """k-th derivative of ``1 - cos(freq t)``; returns shape ``(len(t), len(freq))``."""
    arg = np.multiply.outer(t, freq)
    if k == 0:
        return 1.0 - np.cos(arg)
    return -(freq ** k) * np.cos(arg + 0.5 * k * np.pi)


def ritz_field(sol: RitzSolution, kind: QuantityKind, points) -> np.ndarray:
    """Any plate quantity of a Ritz solution at ``points`` (shape ``(..., 2)``).

    The load is returned as the applied uniform ``q0``: the fourth derivatives
    of the truncated cosine series do not converge pointwise, so ``L_q`` of
    the series is not a usable ground truth.
    """
    pts = np.asarray(points, dtype=float)
    shape = pts.shape[:-1]
    if QuantityKind(kind) is QuantityKind.Q:
        return np.full(shape, float(sol.load.amplitude))
    flat = pts.reshape(-1, 2)
    geom = sol.geometry
    fm = 2.0 * np.pi * np.arange(1, sol.n_m + 1) / geom.a
    fn = 2.0 * np.pi * np.arange(1, sol.n_n + 1) / geom.b

    def derivative(ox, oy):
        bx = _one_minus_cos_derivative(ox, fm, flat[:, 0])
        by = _one_minus_cos_derivative(oy, fn, flat[:, 1])
        return np.einsum("pm,mn,pn->p", bx, sol.coefficients, by)

    return operator_for(kind).apply(derivative, geom.rigidity, geom.poisson).reshape(shape)


def ritz_center_coefficient(sol: RitzSolution) -> float:
    """Centre deflection normalized as ``w_c D / (q0 a^4)``."""
    g = sol.geometry
    wc = float(ritz_field(sol, QuantityKind.W, [[g.a / 2, g.b / 2]])[0])
    return wc * g.rigidity / (sol.load.amplitude * g.a ** 4)
