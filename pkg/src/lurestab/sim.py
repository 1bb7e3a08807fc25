"""Closed-loop simulation, Lyapunov evaluation and empirical certificate checks."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import lmi
from .lmi import MultiplierSet
from .nonlin import DiagonalNonlinearity
from .system import LurePlant, SectorSlopeSpec

logger = logging.getLogger(__name__)

LOOP_TOL = 1e-12
LOOP_MAX_ITERS = 10_000
LOOP_DAMPING = 0.5
DECREASE_SLACK = 1e-8
DECAY_THRESHOLD = 1e-6
DIVERGENCE_BOUND = 1e100


class WellPosednessError(ValueError):
    pass


class LoopConvergenceError(RuntimeError):
    pass


class InconsistentTrajectory(ValueError):
    pass


class CertificateFalsified(AssertionError):
    """A verified certificate met a trajectory along which V does not decrease."""


@dataclass(eq=False)
class Trajectory:
    x: np.ndarray  # (K+1, n)
    q: np.ndarray  # (K+1, n_q)
    p: np.ndarray  # (K+1, n_q)
    loop_residual: np.ndarray  # (K+1,)
    output_residual: np.ndarray  # (K+1,)
    diverged: bool = False  # rollout stopped early at DIVERGENCE_BOUND

    @property
    def steps(self) -> int:
        return self.x.shape[0] - 1

    def final_norm(self) -> float:
        return np.inf if self.diverged else float(np.linalg.norm(self.x[-1]))

    def zeta(self, k: int) -> np.ndarray:
        return np.concatenate([self.x[k], self.p[k], self.p[k + 1]])

    def to_csv(self, path, V=None, dV=None) -> None:
        K1, n = self.x.shape
        m = self.q.shape[1]
        header = (["k"] + [f"x{i + 1}" for i in range(n)] + [f"q{i + 1}" for i in range(m)]
                  + [f"p{i + 1}" for i in range(m)] + ["V", "dV"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(K1):
                v = "" if V is None else f"{V[k]:.17g}"
                dv = "" if dV is None or k >= len(dV) else f"{dV[k]:.17g}"
                w.writerow([k] + [f"{a:.17g}" for a in self.x[k]] + [f"{a:.17g}" for a in self.q[k]]
                           + [f"{a:.17g}" for a in self.p[k]] + [v, dv])


def _solve_loop(Cx, D, phi, damping, tol, max_iters):
    """q = Cx - D phi(q) by damped fixed-point iteration."""
    q = Cx.copy()
    scale = max(1.0, float(np.max(np.abs(Cx), initial=0.0)))
    for _ in range(max_iters):
        target = Cx - D @ phi(q)
        r = float(np.max(np.abs(target - q), initial=0.0))
        if r <= tol * scale:
            return q
        q = (1.0 - damping) * q + damping * target
    raise LoopConvergenceError(f"loop did not converge in {max_iters} iterations (residual {r:.3g})")


def simulate(plant: LurePlant, phi: DiagonalNonlinearity, x0, K: int,
             damping: float = LOOP_DAMPING, tol: float = LOOP_TOL,
             max_iters: int = LOOP_MAX_ITERS) -> Trajectory:
    """Roll out x+ = Ax + Bp, q = Cx + Dp, p = -phi(q) for K steps."""
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (plant.n,):
        raise ValueError(f"x0 must have length {plant.n}")
    if phi.n_q != plant.n_q:
        raise ValueError(f"nonlinearity has {phi.n_q} channels, plant has {plant.n_q}")
    implicit = bool(np.any(D))
    if implicit:
        gain = np.linalg.norm(D, 2) * float(np.max(phi.mu))
        if not gain < 1.0:
            raise WellPosednessError(f"loop is not a contraction: ||D|| max(mu) = {gain:.6g} >= 1")
    m = plant.n_q
    x = np.zeros((K + 1, plant.n))
    q = np.zeros((K + 1, m))
    p = np.zeros((K + 1, m))
    loop_res = np.zeros(K + 1)
    x[0] = x0
    last, diverged = K, False
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K + 1):
            Cx = C @ x[k]
            qk = _solve_loop(Cx, D, phi, damping, tol, max_iters) if implicit else Cx
            pk = -phi(qk)
            q[k], p[k] = qk, pk
            loop_res[k] = float(np.max(np.abs(qk - Cx - D @ pk), initial=0.0))
            if k < K:
                x[k + 1] = A @ x[k] + B @ pk
                if not np.all(np.abs(x[k + 1]) < DIVERGENCE_BOUND):
                    last, diverged = k, True
                    break
    x, q, p, loop_res = x[:last + 1], q[:last + 1], p[:last + 1], loop_res[:last + 1]
    out_res = np.max(np.abs(q - x @ C.T - p @ D.T), axis=1, initial=0.0)
    if diverged:
        logger.info("trajectory left |x| < %g after %d steps", DIVERGENCE_BOUND, last + 1)
    return Trajectory(x, q, p, loop_res, out_res, diverged)


def random_unit_vectors(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Uniform on the unit sphere."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def lyapunov_value(x, p, q, mults: MultiplierSet, phi: DiagonalNonlinearity, xi) -> float:
    """x'P x + 2 sum Q_ii int_0^q phi + 2 sum Qt_ii int_0^q (xi s - phi), with x = [x; p; q]."""
    x, p, q = (np.atleast_1d(np.asarray(a, float)) for a in (x, p, q))
    xi = np.broadcast_to(np.asarray(xi, float), q.shape)
    xbar = np.concatenate([x, p, q])
    P = mults.P
    if P.shape[0] != xbar.shape[0]:
        raise ValueError("multiplier dimensions do not match the state")
    V = float(xbar @ P @ xbar)
    Q, Qt = np.diag(mults.Q), np.diag(mults.Qt)
    for i in range(q.shape[0]):
        if Q[i] == 0.0 and Qt[i] == 0.0:
            continue
        I = phi.integral(i, 0.0, float(q[i]))
        V += 2.0 * Q[i] * I + 2.0 * Qt[i] * (0.5 * xi[i] * q[i] ** 2 - I)
    return V


@dataclass(eq=False)
class DecreaseReport:
    V: np.ndarray
    dV: np.ndarray
    max_dV: float
    bound: np.ndarray  # zeta'(Aa'PAa - Ea'PEa + U1 + U2)zeta
    G_bound: np.ndarray  # zeta' G zeta
    sandwich_violation: float
    G_violation: float

    @property
    def sandwich_holds(self) -> bool:
        return self.sandwich_violation <= 0.0

    @property
    def G_bound_holds(self) -> bool:
        return self.G_violation <= 0.0


def check_decrease(plant: LurePlant, traj: Trajectory, mults: MultiplierSet,
                   phi: DiagonalNonlinearity, spec: SectorSlopeSpec, criterion: str = "thm1",
                   verified: bool = True, slack: float = DECREASE_SLACK,
                   quad_slack: float = 1e-9) -> DecreaseReport:
    """Delta V along the trajectory, checked against the certificate.

    With ``verified`` set, any step from a nonzero state where Delta V
    exceeds ``slack`` raises :class:`CertificateFalsified`, as does a
    trajectory that diverged under a verified certificate. The two upper
    bounds from the stability proof are evaluated on the same data and
    their violations reported (not raised).
    """
    tol = 1e-9 * max(1.0, float(np.max(np.abs(traj.x), initial=0.0)), float(np.max(np.abs(traj.q), initial=0.0)))
    out_res = np.abs(traj.q - traj.x @ plant.C.T - traj.p @ plant.D.T)
    if np.max(out_res, initial=0.0) > tol:
        raise InconsistentTrajectory("q != Cx + Dp along the trajectory")
    state_res = np.abs(traj.x[1:] - traj.x[:-1] @ plant.A.T - traj.p[:-1] @ plant.B.T)
    if np.max(state_res, initial=0.0) > tol:
        raise InconsistentTrajectory("x+ != Ax + Bp along the trajectory")
    mode = "thm2" if criterion == "thm2" else "thm1"
    K = traj.steps
    V = np.array([lyapunov_value(traj.x[k], traj.p[k], traj.q[k], mults, phi, spec.xi)
                  for k in range(K + 1)])
    dV = np.diff(V)
    lift = lmi.build_lifting(plant)
    U1, U2 = lmi.build_bound_matrices(plant, mults.Q, mults.Qt, spec)
    M = lift.Aa.T @ mults.P @ lift.Aa - lift.Ea.T @ mults.P @ lift.Ea + U1 + U2
    G = lmi.assemble_structural(plant, mults, spec, mode)
    Z = np.array([traj.zeta(k) for k in range(K)]).reshape(K, plant.n + 2 * plant.n_q)
    bound = np.einsum("ki,ij,kj->k", Z, M, Z)
    G_bound = np.einsum("ki,ij,kj->k", Z, G, Z)
    scale = np.maximum(1.0, np.abs(V[:-1]))
    sandwich = float(np.max(dV - bound - quad_slack * scale, initial=-np.inf))
    g_viol = float(np.max(dV - G_bound - quad_slack * scale, initial=-np.inf))
    max_dV = float(np.max(dV, initial=-np.inf))
    if traj.diverged:
        max_dV = np.inf
    if verified:
        if traj.diverged:
            raise CertificateFalsified(f"trajectory diverged after {K + 1} steps under a verified certificate")
        nonzero = np.linalg.norm(traj.x[:-1], axis=1) > 0
        bad = np.nonzero(nonzero & (dV >= slack))[0]
        if bad.size:
            k = int(bad[0])
            raise CertificateFalsified(
                f"Delta V = {dV[k]:.6g} >= {slack:g} at step {k} (|x| = {np.linalg.norm(traj.x[k]):.3g})")
    return DecreaseReport(V, dV, max_dV, bound, G_bound, sandwich, g_viol)
