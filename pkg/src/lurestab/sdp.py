"""Strict LMI feasibility via a normalized epigraph SDP, and an independent
certificate verifier.

The solver (cvxopt's conic interior point method) only proposes multipliers.
Every classification as feasible rests on :func:`verify_certificate`, which
reassembles G from the multipliers and runs a dense symmetric eigensolver.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from cvxopt import matrix, solvers

from . import lmi
from .lmi import DIAGONAL_NAMES, MultiplierSet
from .system import LurePlant, SectorSlopeSpec

logger = logging.getLogger(__name__)

EPS_PD = 1e-6
EPS_FEAS = 1e-7
EPS_CONE = 1e-9
SYMMETRY_TOL = 1e-12
MAX_ITERS = 5000
SOLVER_TOL = 1e-9
SOLVER_RELTOL = 1e-8
# a failed tight solve is retried once at this tolerance; the result is only
# a candidate, the verifier still decides
RETRY_TOL = 1e-7
# the solver works with a slightly larger P11 floor so that its output clears
# the verifier's floor after renormalization
PD_PAD = 1.01

STRUCTURES = ("scalar", "diagonal")
FEASIBLE, INFEASIBLE, INDETERMINATE = "feasible", "infeasible", "indeterminate"


class SymmetryError(ValueError):
    pass


def sym_eig(M, vectors: bool = False):
    """Ascending eigenvalues (and optionally eigenvectors) of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.size:
        scale = max(float(np.max(np.abs(M))), np.finfo(float).tiny)
        asym = float(np.max(np.abs(M - M.T)))
        if asym > SYMMETRY_TOL * scale:
            raise SymmetryError(f"matrix is not symmetric (relative asymmetry {asym / scale:.3g})")
    S = 0.5 * (M + M.T)
    if vectors:
        return np.linalg.eigh(S)
    return np.linalg.eigvalsh(S)


def _lambda_max(M) -> float:
    return float(sym_eig(M)[-1]) if M.size else -np.inf


def _lambda_min(M) -> float:
    return float(sym_eig(M)[0]) if M.size else np.inf


@dataclass(frozen=True)
class Tolerances:
    """Absolute tolerances are the relative ones times rho, the size of G."""

    eps_pd: float = EPS_PD
    eps_feas: float = EPS_FEAS
    eps_cone: float = EPS_CONE

    def scaled(self, rho: int) -> tuple[float, float, float]:
        return self.eps_pd * rho, self.eps_feas * rho, self.eps_cone * rho


def assembly_mode(criterion: str) -> str:
    if criterion not in lmi.CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; choose from {lmi.CRITERIA}")
    return "thm2" if criterion == "thm2" else "thm1"


@dataclass(eq=False)
class LmiFeasibilityProblem:
    """G(theta) = sum_k theta_k basis[k] must be negative definite.

    theta holds the free parameters: the upper triangle of the free P block
    (size ``p_size``, leading) followed by one entry per free diagonal
    multiplier (``scalar``) or per channel (``diagonal``). ``lift`` maps
    theta to the packed vector of :func:`lmi.pack`.
    """

    plant: LurePlant
    spec: SectorSlopeSpec
    criterion: str
    structure: str
    p_size: int
    free: tuple
    lift: np.ndarray
    basis: np.ndarray
    tolerances: Tolerances = field(default_factory=Tolerances)

    @property
    def rho(self) -> int:
        return self.plant.n + 2 * self.plant.n_q

    @property
    def n_params(self) -> int:
        return self.lift.shape[1]

    def multipliers(self, theta) -> MultiplierSet:
        return lmi.unpack(self.lift @ np.asarray(theta, float), self.plant.n, self.plant.n_q)

    def G(self, theta) -> np.ndarray:
        return np.tensordot(np.asarray(theta, float), self.basis, axes=1)


def build_problem(plant: LurePlant, spec: SectorSlopeSpec, criterion: str,
                  structure: str = "scalar", tolerances: Tolerances | None = None) -> LmiFeasibilityProblem:
    """Restrict the multipliers to the criterion's mask and tabulate G on a basis."""
    mode = assembly_mode(criterion)
    if structure not in STRUCTURES:
        raise ValueError(f"structure must be one of {STRUCTURES}")
    n, m = plant.n, plant.n_q
    rho = n + 2 * m
    p_size = rho if lmi.FULL_P[criterion] else n
    free = lmi.FREE_DIAGONALS[criterion] if m else ()
    dim = lmi.packed_dim(n, m)
    iu = np.triu_indices(rho)
    pos = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(*iu))}
    offset = len(iu[0])

    cols = []
    for i in range(p_size):
        for j in range(i, p_size):
            c = np.zeros(dim)
            c[pos[(i, j)]] = 1.0
            cols.append(c)
    for name in free:
        start = offset + DIAGONAL_NAMES.index(name) * m
        if structure == "scalar":
            c = np.zeros(dim)
            c[start:start + m] = 1.0
            cols.append(c)
        else:
            for i in range(m):
                c = np.zeros(dim)
                c[start + i] = 1.0
                cols.append(c)
    lift = np.array(cols).T.reshape(dim, len(cols))
    basis = np.array([lmi.assemble_structural(plant, lmi.unpack(c, n, m), spec, mode) for c in cols])
    return LmiFeasibilityProblem(plant, spec, criterion, structure, p_size, tuple(free), lift,
                                 basis, tolerances or Tolerances())


@dataclass(eq=False)
class Certificate:
    criterion: str
    multipliers: MultiplierSet
    xi: np.ndarray
    mu: np.ndarray
    status: str = INDETERMINATE
    margin: float = float("nan")
    verified: bool = False
    residuals: dict = field(default_factory=dict)
    structure: str = "scalar"
    solver_status: str = ""
    solver_margin: float = float("nan")
    tolerances: Tolerances = field(default_factory=Tolerances)
    plant: LurePlant | None = None

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    @property
    def spec(self) -> SectorSlopeSpec:
        return SectorSlopeSpec(self.xi, self.mu)

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return x if np.isfinite(x) else repr(x)
        d = {
            "criterion": self.criterion,
            "status": self.status,
            "verified": self.verified,
            "margin": num(self.margin),
            "solver_status": self.solver_status,
            "solver_margin": num(self.solver_margin),
            "structure": self.structure,
            "xi": [num(x) for x in self.xi],
            "mu": [num(x) for x in self.mu],
            "residuals": {k: num(v) for k, v in self.residuals.items()},
            "tolerances": {"eps_pd": self.tolerances.eps_pd, "eps_feas": self.tolerances.eps_feas,
                           "eps_cone": self.tolerances.eps_cone},
            "multipliers": self.multipliers.to_dict(),
        }
        if self.plant is not None:
            d["plant"] = self.plant.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        def num(x):
            return float(x)
        plant = LurePlant.from_dict(d["plant"]) if "plant" in d else None
        return cls(
            criterion=d["criterion"],
            multipliers=MultiplierSet.from_dict(d["multipliers"]),
            xi=np.array([num(x) for x in d["xi"]]),
            mu=np.array([num(x) for x in d["mu"]]),
            status=d.get("status", INDETERMINATE),
            margin=num(d.get("margin", "nan")),
            verified=bool(d.get("verified", False)),
            residuals={k: num(v) for k, v in d.get("residuals", {}).items()},
            structure=d.get("structure", "scalar"),
            solver_status=d.get("solver_status", ""),
            solver_margin=num(d.get("solver_margin", "nan")),
            tolerances=Tolerances(**d.get("tolerances", {})),
            plant=plant,
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "Certificate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _mask_violation(mults: MultiplierSet, criterion: str) -> float:
    """Largest magnitude among entries the criterion fixes to zero."""
    worst = 0.0
    for name in DIAGONAL_NAMES:
        if name not in lmi.FREE_DIAGONALS[criterion]:
            worst = max(worst, float(np.max(np.abs(getattr(mults, name)), initial=0.0)))
    if not lmi.FULL_P[criterion]:
        P = mults.P.copy()
        P[: mults.n, : mults.n] = 0.0
        worst = max(worst, float(np.max(np.abs(P), initial=0.0)))
    return worst


def normalize(mults: MultiplierSet) -> MultiplierSet | None:
    """Rescale so that trace(P) + sum of diagonal multipliers = size of G."""
    total = float(np.trace(mults.P)) + sum(float(np.trace(getattr(mults, k))) for k in DIAGONAL_NAMES)
    if not total > 0:
        return None
    return mults.scaled((mults.n + 2 * mults.n_q) / total)


def verify_certificate(plant: LurePlant, cert: Certificate, spec: SectorSlopeSpec | None = None,
                       criterion: str | None = None) -> Certificate:
    """Recompute the margin and every cone residual from the multipliers alone."""
    spec = spec if spec is not None else cert.spec
    criterion = criterion or cert.criterion
    mode = assembly_mode(criterion)
    rho = plant.n + 2 * plant.n_q
    eps_pd, eps_feas, eps_cone = cert.tolerances.scaled(rho)
    raw = cert.multipliers
    mults = normalize(raw)
    scaled = mults if mults is not None else raw
    # stray L terms on a non-odd criterion are caught by the mask check
    G = lmi.assemble_structural(plant, scaled, spec, "thm2" if np.any(scaled.L) or np.any(scaled.Lt) else mode)
    margin = _lambda_max(G)
    diag_min = min((float(np.min(np.diag(getattr(scaled, k)), initial=np.inf)) for k in DIAGONAL_NAMES),
                   default=np.inf)
    residuals = {
        "lambda_min_P": _lambda_min(scaled.P),
        "lambda_min_P11": _lambda_min(scaled.P11),
        "min_diagonal": diag_min if np.isfinite(diag_min) else 0.0,
        "mask_violation": _mask_violation(scaled, criterion),
        "normalization": float(np.trace(raw.P)) + sum(float(np.trace(getattr(raw, k))) for k in DIAGONAL_NAMES),
    }
    verified = bool(
        mults is not None
        and margin < -eps_feas
        and residuals["lambda_min_P"] >= -eps_cone
        and residuals["lambda_min_P11"] >= eps_pd
        and residuals["min_diagonal"] >= -eps_cone
        and residuals["mask_violation"] == 0.0
    )
    status = cert.status
    if verified:
        status = FEASIBLE
    elif status == FEASIBLE:
        status = INDETERMINATE
    return replace(cert, criterion=criterion, multipliers=scaled, xi=spec.xi.copy(), mu=spec.mu.copy(),
                   margin=margin, verified=verified, residuals=residuals, status=status,
                   plant=cert.plant if cert.plant is not None else plant)


def _svec_cols(mats, size):
    """Column-major vectorization used by cvxopt's 's' cones."""
    return np.array([M[:size, :size].reshape(-1, order="F") for M in mats]).T


def solve_feasibility(problem: LmiFeasibilityProblem, max_iters: int = MAX_ITERS,
                      solver_tol: float = SOLVER_TOL) -> Certificate:
    """min t s.t. G(theta) <= t I, P >= 0, P11 >= eps_pd I, multipliers >= 0,
    trace(P) + sum(multipliers) = rho; feasible iff the verified margin is
    below -eps_feas."""
    plant, spec = problem.plant, problem.spec
    n, m = plant.n, plant.n_q
    rho = problem.rho
    eps_pd, eps_feas, _ = problem.tolerances.scaled(rho)
    k = problem.n_params
    mults_basis = [lmi.unpack(problem.lift[:, j], n, m) for j in range(k)]

    # linear cone: diagonal multiplier parameters are nonnegative
    n_p_params = problem.p_size * (problem.p_size + 1) // 2
    Gl = np.zeros((k - n_p_params, k + 1))
    for r, j in enumerate(range(n_p_params, k)):
        Gl[r, j] = -1.0
    hl = np.zeros(k - n_p_params)

    # tI - G(theta) >= 0
    G1 = np.hstack([_svec_cols(problem.basis, rho), -np.eye(rho).reshape(-1, 1, order="F")])
    h1 = np.zeros(rho * rho)
    blocks_G, blocks_h, sdims = [G1], [h1], [rho]
    # P11 - eps I >= 0
    pad = PD_PAD * eps_pd
    G2 = np.hstack([-_svec_cols([b.P for b in mults_basis], n), np.zeros((n * n, 1))])
    blocks_G.append(G2)
    blocks_h.append(-pad * np.eye(n).reshape(-1, order="F"))
    sdims.append(n)
    if problem.p_size > n:
        ps = problem.p_size
        G3 = np.hstack([-_svec_cols([b.P for b in mults_basis], ps), np.zeros((ps * ps, 1))])
        blocks_G.append(G3)
        blocks_h.append(np.zeros(ps * ps))
        sdims.append(ps)

    Gmat = np.vstack([Gl] + blocks_G)
    hvec = np.concatenate([hl] + blocks_h)
    norm_row = np.array([np.trace(b.P) + sum(np.trace(getattr(b, nm)) for nm in DIAGONAL_NAMES)
                         for b in mults_basis] + [0.0])
    # column scaling (theta_j = theta'_j / d_j) keeps the KKT systems balanced
    # when 1/xi or xi terms dominate G
    d = np.ones(k + 1)
    d[:k] = np.maximum(np.max(np.abs(problem.basis), axis=(1, 2)), np.abs(norm_row[:k]))
    d[d == 0] = 1.0
    Gmat = Gmat / d
    norm_row = norm_row / d
    c = np.zeros(k + 1)
    c[-1] = 1.0
    dims = {"l": Gl.shape[0], "q": [], "s": sdims}
    args = (matrix(c), matrix(Gmat), matrix(hvec), dims, matrix(norm_row.reshape(1, -1)),
            matrix([float(rho)]))
    sol = None
    for tol, reltol in ((solver_tol, SOLVER_RELTOL), (RETRY_TOL, RETRY_TOL)):
        options = {"show_progress": False, "maxiters": int(max_iters), "abstol": tol,
                   "reltol": reltol, "feastol": tol}
        try:
            sol = solvers.conelp(*args, options=options)
        except (ArithmeticError, ValueError) as exc:
            logger.debug("conelp failed at tol %g: %s", tol, exc)
            sol = None
        if sol is not None and sol["status"] == "optimal":
            break

    if sol is None or sol.get("x") is None:
        mults = MultiplierSet.zeros(n, m)
        cert = Certificate(problem.criterion, mults, spec.xi.copy(), spec.mu.copy(),
                           structure=problem.structure, solver_status="error",
                           tolerances=problem.tolerances, plant=plant)
        return verify_certificate(plant, cert, spec, problem.criterion)

    x = np.array(sol["x"]).ravel() / d
    theta, t = x[:-1], float(x[-1])
    mults = problem.multipliers(theta)
    cert = Certificate(problem.criterion, mults, spec.xi.copy(), spec.mu.copy(),
                       structure=problem.structure, solver_status=sol["status"],
                       solver_margin=t, tolerances=problem.tolerances, plant=plant)
    cert = verify_certificate(plant, cert, spec, problem.criterion)
    if cert.verified:
        return cert
    dual_obj = sol.get("dual objective")
    dual_ok = sol.get("dual infeasibility") is not None and sol["dual infeasibility"] <= 1e-6
    if sol["status"] == "optimal" and t >= -eps_feas:
        status = INFEASIBLE
    elif dual_ok and dual_obj is not None and dual_obj >= -eps_feas:
        status = INFEASIBLE
    else:
        status = INDETERMINATE
    return replace(cert, status=status)


def lyapunov_problem(A, tolerances: Tolerances | None = None) -> LmiFeasibilityProblem:
    """Plain discrete Lyapunov inequality A' P A - P < 0 (a plant with no nonlinearity)."""
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    plant = LurePlant(A, np.zeros((n, 0)), np.zeros((0, n)), np.zeros((0, 0)))
    return build_problem(plant, SectorSlopeSpec(np.zeros(0), np.zeros(0)), "thm1",
                         tolerances=tolerances)
