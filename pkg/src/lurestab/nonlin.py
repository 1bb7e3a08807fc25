"""Diagonal nonlinearities: class predicates, bundled test functions and
numeric checks of the pointwise and integral inequalities behind the LMIs.

All class predicates are grid based. The nonlinearity classes are defined
by inequalities quantified over the whole real line, so a grid check can
only refute membership, never prove it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

POINTWISE_TOL = 1e-12
INTEGRAL_TOL = 1e-8
QUAD_TOL = 1e-10
ROUNDOFF = 64 * np.finfo(float).eps

KINDS = ("saturation", "deadzone_ramp", "smooth_tanh")


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DiagonalNonlinearity:
    """phi(q) = (phi_1(q_1), ..., phi_nq(q_nq)).

    ``channels`` are vectorized scalar functions. ``antiderivatives``, when
    present, give F_i(s) = integral of phi_i from 0 to s in closed form.
    ``xi``/``mu``/``odd`` are the declared class memberships.
    """

    channels: tuple
    xi: np.ndarray
    mu: np.ndarray
    odd: bool = False
    antiderivatives: tuple | None = None
    kind: str = "custom"

    def __post_init__(self):
        m = len(self.channels)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "xi", np.broadcast_to(np.asarray(self.xi, float), (m,)).copy())
        object.__setattr__(self, "mu", np.broadcast_to(np.asarray(self.mu, float), (m,)).copy())
        if self.antiderivatives is not None:
            object.__setattr__(self, "antiderivatives", tuple(self.antiderivatives))
            if len(self.antiderivatives) != m:
                raise ValueError("one antiderivative per channel")
        for i, f in enumerate(self.channels):
            if abs(float(f(0.0))) > POINTWISE_TOL:
                raise ValueError(f"channel {i} has phi(0) != 0")

    @property
    def n_q(self) -> int:
        return len(self.channels)

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        for i, f in enumerate(self.channels):
            out[..., i] = f(q[..., i])
        return out

    def channel(self, i: int) -> Callable:
        return self.channels[i]

    def integral(self, i: int, a: float, b: float) -> float:
        """Integral of phi_i over [a, b]; closed form when available."""
        if self.antiderivatives is not None:
            F = self.antiderivatives[i]
            return float(F(b) - F(a))
        return adaptive_simpson(self.channels[i], a, b)


def adaptive_simpson(f: Callable, a: float, b: float, tol: float = QUAD_TOL,
                     max_depth: int = 60, max_intervals: int = 200_000) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    Raises QuadratureError when the interval budget is exhausted before
    every panel meets its share of ``tol`` (or the round-off floor, which
    matters when the integrand is large).
    """
    a, b = float(a), float(b)
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0

    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb, fm = float(f(a)), float(f(b)), float(f(0.5 * (a + b)))
    stack = [(a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 0)]
    total = 0.0
    count = 0
    while stack:
        lo, hi, flo, fmid, fhi, whole, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = float(f(lm)), float(f(rm))
        left = simpson(flo, flm, fmid, mid - lo)
        right = simpson(fmid, frm, fhi, hi - mid)
        delta = left + right - whole
        count += 1
        # accept at the tolerance, or once the panel is at round-off level
        if abs(delta) <= 15.0 * eps or abs(delta) <= ROUNDOFF * (abs(left) + abs(right)):
            total += left + right + delta / 15.0
            continue
        if depth >= max_depth or count > max_intervals:
            raise QuadratureError(f"no convergence on [{lo}, {hi}]")
        stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
        stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
    return sign * total


def standard_grid(xi, points: int = 10_001) -> np.ndarray:
    """Symmetric grid over [-R, R], R = 100 * max(1, 1/min(xi))."""
    xi_min = float(np.min(np.atleast_1d(xi)))
    R = 100.0 * max(1.0, 1.0 / xi_min)
    return np.linspace(-R, R, points)


def _channel_values(phi, grid):
    return [np.asarray(f(grid), dtype=float) for f in phi.channels]


def verify_sector(phi: DiagonalNonlinearity, xi, grid=None, tol: float = POINTWISE_TOL) -> bool:
    """phi_i(s) (phi_i(s)/xi_i - s) <= tol on the grid, every channel."""
    xi = np.broadcast_to(np.asarray(xi, float), (phi.n_q,))
    grid = standard_grid(xi) if grid is None else np.asarray(grid, float)
    for i, v in enumerate(_channel_values(phi, grid)):
        # written as phi (phi - xi s) / xi so the boundary phi = xi s is exact
        if np.max(v * (v - xi[i] * grid) / xi[i]) > tol:
            return False
    return True


def verify_slope(phi: DiagonalNonlinearity, mu, grid=None, tol: float = POINTWISE_TOL) -> bool:
    """Every pairwise difference quotient on the grid lies in [-tol, mu_i + tol].

    On a sorted grid a quotient between any two points is a weighted mean of
    the adjacent quotients between them, so the extreme pairwise quotients
    are attained by neighbours; only those are formed.
    """
    mu = np.broadcast_to(np.asarray(mu, float), (phi.n_q,))
    grid = standard_grid(phi.xi) if grid is None else np.asarray(grid, float)
    grid = np.unique(grid)
    if grid.size < 2:
        raise ValueError("slope check needs at least two grid points")
    ds = np.diff(grid)
    for i, v in enumerate(_channel_values(phi, grid)):
        quot = np.diff(v) / ds
        # rounding floor of a difference quotient
        floor = 8 * np.finfo(float).eps * np.max(np.abs(v)) / np.min(ds)
        slack = tol + floor
        if np.min(quot) < -slack or np.max(quot) > mu[i] + slack:
            return False
    return True


def verify_odd(phi: DiagonalNonlinearity, grid=None, tol: float = POINTWISE_TOL) -> bool:
    grid = standard_grid(phi.xi) if grid is None else np.asarray(grid, float)
    for f in phi.channels:
        if np.max(np.abs(np.asarray(f(grid)) + np.asarray(f(-grid)))) > tol:
            return False
    return True


# bundled kinds -----------------------------------------------------------

def _saturation(xi):
    def f(s):
        return np.clip(xi * np.asarray(s, float), -xi, xi)

    def F(s):
        u = np.abs(np.asarray(s, float))
        return np.where(u <= 1.0, 0.5 * xi * u * u, 0.5 * xi + xi * (u - 1.0))

    return f, F


def _deadzone_ramp(xi, mu):
    # zero on |s| <= 1, slope mu up to s*, then the sector line xi*s;
    # s* = mu / (mu - xi) joins ramp and line. mu == xi: plain dead zone.
    s_star = np.inf if mu == xi else mu / (mu - xi)

    def f(s):
        s = np.asarray(s, float)
        u = np.abs(s)
        ramp = mu * np.maximum(u - 1.0, 0.0)
        out = np.where(u <= s_star, ramp, xi * u)
        return np.sign(s) * out

    def F(s):
        u = np.abs(np.asarray(s, float))
        ramp = 0.5 * mu * np.maximum(u - 1.0, 0.0) ** 2
        if np.isinf(s_star):
            return ramp
        tail = 0.5 * mu * (s_star - 1.0) ** 2 + 0.5 * xi * (u * u - s_star * s_star)
        return np.where(u <= s_star, ramp, tail)

    return f, F


def _smooth_tanh(xi, mu):
    a, b = xi * xi / mu, mu / xi

    def f(s):
        return a * np.tanh(b * np.asarray(s, float))

    def F(s):
        x = np.abs(b * np.asarray(s, float))
        logcosh = x + np.log1p(np.exp(-2.0 * x)) - np.log(2.0)
        return (a / b) * logcosh

    return f, F


def make_test_nonlinearity(xi, mu, kind: str, n_q: int | None = None) -> DiagonalNonlinearity:
    """Build one of the bundled odd, sector- and slope-restricted kinds.

    saturation:    clamp(xi s, -xi, xi)
    deadzone_ramp: 0 on |s| <= 1, slope-mu ramp, then xi s (needs mu >= xi)
    smooth_tanh:   (xi^2/mu) tanh(mu s / xi), slope xi at the origin
    """
    xi = np.atleast_1d(np.asarray(xi, float))
    mu = np.atleast_1d(np.asarray(mu, float))
    m = n_q if n_q is not None else max(xi.size, mu.size)
    xi = np.broadcast_to(xi, (m,)).copy()
    mu = np.broadcast_to(mu, (m,)).copy()
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {KINDS}")
    if np.any(xi <= 0) or np.any(mu <= 0) or not np.all(np.isfinite(xi)):
        raise ValueError("xi and mu must be positive")
    if np.any(mu < xi):
        raise ValueError(f"{kind} has slope xi at some point and needs mu >= xi")
    fs, Fs = [], []
    for x, u in zip(xi, mu):
        if kind == "saturation":
            f, F = _saturation(x)
        elif kind == "deadzone_ramp":
            f, F = _deadzone_ramp(x, u)
        else:
            f, F = _smooth_tanh(x, u)
        fs.append(f)
        Fs.append(F)
    return DiagonalNonlinearity(tuple(fs), xi, mu, odd=True, antiderivatives=tuple(Fs), kind=kind)


def linear_nonlinearity(gain, n_q: int = 1) -> DiagonalNonlinearity:
    """phi(s) = gain * s per channel: in sector [0, gain] with slope gain."""
    gain = np.broadcast_to(np.asarray(gain, float), (n_q,)).copy()
    fs = tuple((lambda k: (lambda s: k * np.asarray(s, float)))(k) for k in gain)
    Fs = tuple((lambda k: (lambda s: 0.5 * k * np.asarray(s, float) ** 2))(k) for k in gain)
    return DiagonalNonlinearity(fs, gain, gain, odd=True, antiderivatives=Fs, kind="linear")


# inequalities from the stability proofs ----------------------------------

def check_integral_bound_Q(phi_channel: Callable, q_a: float, q_b: float, mu_i: float,
                           tol: float = QUAD_TOL) -> tuple[float, float]:
    """(lhs, rhs) for the slope bound on the first integral term:

    lhs = int_{q_a}^{q_b} phi
    rhs = (phi(q_b) - phi(q_a)) (q_b - q_a) - (phi(q_b) - phi(q_a))^2 / (2 mu)

    The inequality lhs <= rhs only holds in general when phi(q_a) = 0;
    the general bound carries phi(q_b) in place of the difference.
    """
    lhs = adaptive_simpson(phi_channel, q_a, q_b, tol)
    fa, fb = float(phi_channel(q_a)), float(phi_channel(q_b))
    dphi = fb - fa
    rhs = dphi * (q_b - q_a) - dphi * dphi / (2.0 * mu_i)
    return lhs, rhs


def check_integral_bound_Qtilde(phi_channel: Callable, q_a: float, q_b: float, xi_i: float,
                                mu_i: float, tol: float = QUAD_TOL) -> tuple[float, float]:
    """(lhs, rhs) with lhs = int_{q_a}^{q_b} (xi s - phi(s)) ds and

    rhs = -(phi(q_b) - phi(q_a))^2/(2 mu) - phi(q_a)(q_b - q_a) + xi (q_b^2 - q_a^2)/2
    """
    lhs = adaptive_simpson(lambda s: xi_i * s - float(phi_channel(s)), q_a, q_b, tol)
    fa, fb = float(phi_channel(q_a)), float(phi_channel(q_b))
    dphi = fb - fa
    rhs = -dphi * dphi / (2.0 * mu_i) - fa * (q_b - q_a) + 0.5 * xi_i * (q_b ** 2 - q_a ** 2)
    return lhs, rhs


def pointwise_residuals(q_k, q_k1, phi_k, phi_k1, xi, mu) -> dict:
    """Worst-case residual of each pointwise inequality, oriented so that
    ``residual <= 0`` means satisfied.

    Keys: ``sector`` and ``slope`` for the sector and slope relations at
    one step, ``odd_lower`` and ``odd_upper`` for the two odd-monotone
    relations between consecutive samples.
    """
    q_k, q_k1, phi_k, phi_k1 = (np.atleast_1d(np.asarray(a, float)) for a in (q_k, q_k1, phi_k, phi_k1))
    xi = np.asarray(xi, float)
    mu = np.asarray(mu, float)
    mu_inv = np.where(np.isfinite(mu), 1.0 / mu, 0.0)
    dq = q_k1 - q_k
    dphi = phi_k1 - phi_k
    cross = dq * (phi_k1 + phi_k) - phi_k * phi_k1 / xi
    return {
        "sector": float(np.max(phi_k * (phi_k / xi - q_k))),
        "slope": float(np.max(dphi * (mu_inv * dphi - dq))),
        "odd_lower": float(np.max(-cross)),
        "odd_upper": float(np.max(cross - 2.0 * q_k1 * phi_k1)),
    }


def check_pointwise_constraints(samples: Sequence, xi, mu, odd: bool,
                                tol: float = POINTWISE_TOL) -> bool:
    """``samples = (q_k, q_k1, phi_k, phi_k1)``, arrays of shape (n_q,) or
    (M, n_q). True iff the sector and slope relations hold, plus both
    odd-monotone relations when ``odd``."""
    r = pointwise_residuals(*samples, xi, mu)
    keys = ("sector", "slope", "odd_lower", "odd_upper") if odd else ("sector", "slope")
    return all(r[k] <= tol for k in keys)
