"""Assembly of the stability LMIs.

Two independent routes build the same symmetric matrix G:

* structural: G = Aa' P Aa - Ea' P Ea + U1 + U2 - S1 - S2 - S3 (- S4 - S5),
  from the lifted matrices and the S-procedure matrices;
* closed form: the closed-form block expressions G11..G33 (and the odd
  corrections), used only as a transcription check.

Lifted coordinate: zeta_k = [x_k; p_k; p_{k+1}], with p = -phi(q).

The closed form carries every slope multiplier as mu*N where the structural
route carries N (for instance -2N against -2 N mu^-1 in the (2,2) block).
Both describe the same feasible set since mu > 0 is diagonal;
:func:`closed_form_multipliers` gives the substitution that makes the two
routes agree entry for entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .system import LurePlant, SectorSlopeSpec

logger = logging.getLogger(__name__)

CRITERIA = ("circle", "tsypkin", "thm1", "thm2")
DIAGONAL_NAMES = ("Q", "Qt", "T", "Tt", "N", "L", "Lt")

# Free diagonal multipliers per criterion, and whether P is the full lifted
# matrix or only its P11 block. Tt is free for circle: with T alone the
# p_{k+1} row of G is identically zero and no strict solution exists.
FREE_DIAGONALS = {
    "circle": ("T", "Tt"),
    "tsypkin": ("Q", "T", "Tt"),
    "thm1": ("Q", "Qt", "T", "Tt", "N"),
    "thm2": DIAGONAL_NAMES,
}
FULL_P = {"circle": False, "tsypkin": False, "thm1": True, "thm2": True}
AGREEMENT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MultiplierSet:
    """Lyapunov matrix P (size n + 2 n_q) and the diagonal multipliers.

    Qt, Tt and Lt are the tilde-multipliers (second integral term, sector
    constraint at k+1, second odd constraint).
    """

    P: np.ndarray
    Q: np.ndarray
    Qt: np.ndarray
    T: np.ndarray
    Tt: np.ndarray
    N: np.ndarray
    L: np.ndarray
    Lt: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got {P.shape}")
        object.__setattr__(self, "P", P)
        for name in DIAGONAL_NAMES:
            M = np.asarray(getattr(self, name), dtype=float)
            if M.ndim == 1:
                M = np.diag(M)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be a square diagonal matrix")
            if np.any(M - np.diag(np.diag(M))):
                raise ValueError(f"{name} must be diagonal")
            object.__setattr__(self, name, M)
        m = self.Q.shape[0]
        if any(getattr(self, k).shape != (m, m) for k in DIAGONAL_NAMES):
            raise ValueError("diagonal multipliers must share one size")
        if P.shape[0] < 2 * m:
            raise ValueError("P is smaller than 2 n_q")

    @property
    def n_q(self) -> int:
        return self.Q.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[0] - 2 * self.n_q

    def blocks(self):
        """(P11, P12, P13, P22, P23, P33)."""
        n, m = self.n, self.n_q
        P = self.P
        a, b = slice(0, n), slice(n, n + m)
        c = slice(n + m, n + 2 * m)
        return P[a, a], P[a, b], P[a, c], P[b, b], P[b, c], P[c, c]

    @property
    def P11(self) -> np.ndarray:
        return self.P[: self.n, : self.n]

    @classmethod
    def zeros(cls, n: int, n_q: int) -> "MultiplierSet":
        z = np.zeros((n_q, n_q))
        return cls(np.zeros((n + 2 * n_q,) * 2), *(z,) * 7)

    def scaled(self, alpha: float) -> "MultiplierSet":
        return MultiplierSet(alpha * self.P, *(alpha * getattr(self, k) for k in DIAGONAL_NAMES))

    def diagonals(self) -> dict:
        return {k: np.diag(getattr(self, k)).copy() for k in DIAGONAL_NAMES}

    def to_dict(self) -> dict:
        d = {"P": self.P.tolist()}
        d.update({k: np.diag(getattr(self, k)).tolist() for k in DIAGONAL_NAMES})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MultiplierSet":
        return cls(np.array(d["P"], float), *(np.diag(np.asarray(d[k], float)) for k in DIAGONAL_NAMES))


def packed_dim(n: int, n_q: int) -> int:
    N = n + 2 * n_q
    return N * (N + 1) // 2 + 7 * n_q


def pack(mults: MultiplierSet) -> np.ndarray:
    """Upper triangle of P (row major), then the diagonals Q, Qt, T, Tt, N, L, Lt."""
    iu = np.triu_indices(mults.P.shape[0])
    parts = [mults.P[iu]] + [np.diag(getattr(mults, k)) for k in DIAGONAL_NAMES]
    return np.concatenate(parts)


def unpack(v, n: int, n_q: int) -> MultiplierSet:
    v = np.asarray(v, dtype=float)
    if v.shape != (packed_dim(n, n_q),):
        raise ValueError(f"packed vector must have length {packed_dim(n, n_q)}")
    N = n + 2 * n_q
    iu = np.triu_indices(N)
    k = len(iu[0])
    P = np.zeros((N, N))
    P[iu] = v[:k]
    P = P + np.triu(P, 1).T
    diags = [v[k + j * n_q: k + (j + 1) * n_q] for j in range(7)]
    return MultiplierSet(P, *(np.diag(d) for d in diags))


@dataclass(frozen=True, eq=False)
class LiftedMatrices:
    Aa: np.ndarray
    Ea: np.ndarray


def build_lifting(plant: LurePlant) -> LiftedMatrices:
    """Aa maps zeta_k to [x_{k+1}; p_{k+1}; q_{k+1}], Ea maps it to [x_k; p_k; q_k]."""
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    n, m = plant.n, plant.n_q
    Z = np.zeros
    I = np.eye(m)
    Aa = np.block([
        [A, B, Z((n, m))],
        [Z((m, n)), Z((m, m)), I],
        [C @ A, C @ B, D],
    ])
    Ea = np.block([
        [np.eye(n), Z((n, m)), Z((n, m))],
        [Z((m, n)), I, Z((m, m))],
        [C, D, Z((m, m))],
    ])
    return LiftedMatrices(Aa, Ea)


def _sym3(M11, M12, M13, M22, M23, M33) -> np.ndarray:
    return np.block([[M11, M12, M13], [M12.T, M22, M23], [M13.T, M23.T, M33]])


def _check_bounds(spec: SectorSlopeSpec, plant: LurePlant):
    if spec.n_q != plant.n_q:
        raise ValueError(f"spec has {spec.n_q} channels, plant has {plant.n_q}")


def _is_diag_psd(M) -> bool:
    return not np.any(M - np.diag(np.diag(M)))


def build_bound_matrices(plant: LurePlant, Q, Qt, spec: SectorSlopeSpec):
    """(U1, U2): upper bounds on the two integral increments of V."""
    _check_bounds(spec, plant)
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    n = plant.n
    Q, Qt = np.asarray(Q, float), np.asarray(Qt, float)
    if not (_is_diag_psd(Q) and _is_diag_psd(Qt)):
        raise ValueError("Q and Qt must be diagonal")
    Xi = np.diag(spec.xi)
    Mi = np.diag(spec.mu_inv)
    CAC = C @ A - C
    CBD = C @ B - D
    U1 = _sym3(
        np.zeros((n, n)), CAC.T @ Q, -CAC.T @ Q,
        Q @ CBD + CBD.T @ Q - Q @ Mi, Q @ D + Q @ Mi,
        -Q @ D - D.T @ Q - Q @ Mi,
    )
    U2 = _sym3(
        A.T @ C.T @ Qt @ Xi @ C @ A - C.T @ Qt @ Xi @ C,
        A.T @ C.T @ Qt @ Xi @ C @ B + CAC.T @ Qt - C.T @ Qt @ Xi @ D,
        A.T @ C.T @ Qt @ Xi @ D,
        B.T @ C.T @ Qt @ Xi @ C @ B - D.T @ Qt @ Xi @ D + CBD.T @ Qt + Qt @ CBD - Mi @ Qt,
        Mi @ Qt + Qt @ D + B.T @ C.T @ Qt @ Xi @ D,
        -Mi @ Qt + D.T @ Qt @ Xi @ D,
    )
    return U1, U2


def build_sector_matrices(plant: LurePlant, T, Tt, spec: SectorSlopeSpec):
    """(S1, S2): sector constraint at k (T) and at k+1 (Tt)."""
    _check_bounds(spec, plant)
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    n, m = plant.n, plant.n_q
    T, Tt = np.asarray(T, float), np.asarray(Tt, float)
    Xinv = np.diag(1.0 / spec.xi)
    zn, znm, zm = np.zeros((n, n)), np.zeros((n, m)), np.zeros((m, m))
    S1 = _sym3(zn, C.T @ T, znm, 2 * Xinv @ T + T @ D + D.T @ T, zm, zm)
    S2 = _sym3(zn, znm, A.T @ C.T @ Tt, zm, B.T @ C.T @ Tt, 2 * Xinv @ Tt + Tt @ D + D.T @ Tt)
    return S1, S2


def build_slope_matrix(plant: LurePlant, N, spec: SectorSlopeSpec) -> np.ndarray:
    _check_bounds(spec, plant)
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    n = plant.n
    N = np.asarray(N, float)
    Mi = np.diag(spec.mu_inv)
    CAC = C @ A - C
    CBD = C @ B - D
    return _sym3(
        np.zeros((n, n)), -CAC.T @ N, CAC.T @ N,
        2 * N @ Mi - CBD.T @ N - N @ CBD,
        -2 * N @ Mi + CBD.T @ N - N @ D,
        2 * N @ Mi + D.T @ N + N @ D,
    )


def build_odd_matrices(plant: LurePlant, L, Lt, spec: SectorSlopeSpec):
    """(S4, S5): the two odd-monotone constraints."""
    _check_bounds(spec, plant)
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    n = plant.n
    L, Lt = np.asarray(L, float), np.asarray(Lt, float)
    Xinv = np.diag(1.0 / spec.xi)
    CAC, CApC = C @ A - C, C @ A + C
    CBD, CBpD = C @ B - D, C @ B + D
    zn = np.zeros((n, n))
    S4 = _sym3(zn, CAC.T @ L, CAC.T @ L, CBD.T @ L + L @ CBD,
               CBD.T @ L + L @ D + Xinv @ L, D.T @ L + L @ D)
    S5 = _sym3(zn, CApC.T @ Lt, CAC.T @ Lt, CBpD.T @ Lt + Lt @ CBpD,
               CBD.T @ Lt + Lt @ D - Xinv @ Lt, D.T @ Lt + Lt @ D)
    return S4, S5


def _check_criterion(mults: MultiplierSet, plant: LurePlant, criterion: str):
    if criterion not in ("thm1", "thm2"):
        raise ValueError(f"assembly criterion must be 'thm1' or 'thm2', got {criterion!r}")
    if mults.n != plant.n or mults.n_q != plant.n_q:
        raise ValueError("multiplier dimensions do not match the plant")
    if criterion == "thm1" and (np.any(mults.L) or np.any(mults.Lt)):
        raise ValueError("L and Lt must vanish for thm1")


def assemble_structural_raw(plant: LurePlant, mults: MultiplierSet, spec: SectorSlopeSpec,
                            criterion: str = "thm2") -> np.ndarray:
    """Structural G before symmetrization (exposes rounding asymmetry)."""
    _check_criterion(mults, plant, criterion)
    lift = build_lifting(plant)
    P = mults.P
    G = lift.Aa.T @ P @ lift.Aa - lift.Ea.T @ P @ lift.Ea
    U1, U2 = build_bound_matrices(plant, mults.Q, mults.Qt, spec)
    S1, S2 = build_sector_matrices(plant, mults.T, mults.Tt, spec)
    S3 = build_slope_matrix(plant, mults.N, spec)
    G = G + U1 + U2 - S1 - S2 - S3
    if criterion == "thm2":
        S4, S5 = build_odd_matrices(plant, mults.L, mults.Lt, spec)
        G = G - S4 - S5
    return G


def assemble_structural(plant: LurePlant, mults: MultiplierSet, spec: SectorSlopeSpec,
                        criterion: str = "thm2") -> np.ndarray:
    G = assemble_structural_raw(plant, mults, spec, criterion)
    return 0.5 * (G + G.T)


def assemble_closed_form(plant: LurePlant, mults: MultiplierSet, spec: SectorSlopeSpec,
                         criterion: str = "thm2") -> np.ndarray:
    """The closed-form block expressions, term by term."""
    _check_criterion(mults, plant, criterion)
    if not spec.slope_restricted:
        raise ValueError("the closed form multiplies N by mu and needs finite mu")
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    P11, P12, P13, P22, P23, P33 = mults.blocks()
    Q, Qt, T, Tt, N = mults.Q, mults.Qt, mults.T, mults.Tt, mults.N
    xi = np.diag(spec.xi)
    xinv = np.diag(1.0 / spec.xi)
    mu = np.diag(spec.mu)
    muinv = np.diag(1.0 / spec.mu)
    CAC = C @ A - C
    CBD = C @ B - D
    W = P11 + P13 @ C + C.T @ P13.T + C.T @ P33 @ C

    G11 = (A.T @ W @ A - P11 - P13 @ C - C.T @ P13.T - C.T @ P33 @ C
           + A.T @ C.T @ Qt @ xi @ C @ A - C.T @ Qt @ xi @ C)
    G12 = (A.T @ W @ B - P12 - P13 @ D - C.T @ P23.T - C.T @ P33 @ D - C.T @ T
           + CAC.T @ Q + A.T @ C.T @ Qt @ xi @ C @ B + CAC.T @ Qt
           - C.T @ Qt @ xi @ D + CAC.T @ mu @ N)
    G13 = (A.T @ P12 + A.T @ P13 @ D + A.T @ C.T @ P23.T + A.T @ C.T @ P33 @ D
           - A.T @ C.T @ Tt - CAC.T @ Q + A.T @ C.T @ Qt @ xi @ D
           - CAC.T @ mu @ N)
    G22 = (B.T @ W @ B - P22 - P23 @ D - D.T @ P23.T - D.T @ P33 @ D
           - 2 * xinv @ T - T @ D - D.T @ T + Q @ CBD + CBD.T @ Q - muinv @ Q
           + B.T @ C.T @ Qt @ xi @ C @ B - D.T @ Qt @ xi @ D
           + CBD.T @ Qt + Qt @ CBD - muinv @ Qt - 2 * N
           + N @ mu @ CBD + CBD.T @ mu @ N)
    G23 = (B.T @ P12 + B.T @ P13 @ D + B.T @ C.T @ P23.T + B.T @ C.T @ P33 @ D
           - B.T @ C.T @ Tt + Q @ D + Q @ muinv + muinv @ Qt
           + Qt @ D + B.T @ C.T @ Qt @ xi @ D + 2 * N
           - CBD.T @ mu @ N + N @ mu @ D)
    G33 = (P22 + P23 @ D + D.T @ P23.T + D.T @ P33 @ D
           - 2 * xinv @ Tt - Tt @ D - D.T @ Tt - Q @ D - D.T @ Q - Q @ muinv
           - muinv @ Qt + D.T @ Qt @ xi @ D
           - 2 * N - N @ mu @ D - D.T @ mu @ N)

    if criterion == "thm2":
        L, Lt = mults.L, mults.Lt
        CApC = C @ A + C
        CBpD = C @ B + D
        G12 = G12 - CAC.T @ L - CApC.T @ Lt
        G13 = G13 - CAC.T @ L - CAC.T @ Lt
        G22 = G22 - CBD.T @ L - L @ CBD - CBpD.T @ Lt - Lt @ CBpD
        G23 = G23 - CBD.T @ L - L @ D - xinv @ L - CBD.T @ Lt - Lt @ D + xinv @ Lt
        G33 = G33 - D.T @ L - L @ D - Lt @ D - D.T @ Lt

    G = _sym3(G11, G12, G13, G22, G23, G33)
    return 0.5 * (G + G.T)


def closed_form_multipliers(mults: MultiplierSet, spec: SectorSlopeSpec) -> MultiplierSet:
    """Multipliers for which the closed form reproduces the structural G of
    ``mults``: the closed form's N stands for mu^-1 times the structural N."""
    return replace(mults, N=np.diag(spec.mu_inv) @ mults.N)


BLOCK_NAMES = ("11", "12", "13", "22", "23", "33")


def block_differences(plant: LurePlant, G1: np.ndarray, G2: np.ndarray) -> dict:
    """Max elementwise relative difference per upper block."""
    n, m = plant.n, plant.n_q
    idx = {"1": slice(0, n), "2": slice(n, n + m), "3": slice(n + m, n + 2 * m)}
    scale = max(np.max(np.abs(G1)), np.max(np.abs(G2)), np.finfo(float).tiny)
    out = {}
    for name in BLOCK_NAMES:
        r, c = idx[name[0]], idx[name[1]]
        d = G1[r, c] - G2[r, c]
        out[name] = float(np.max(np.abs(d)) / scale) if d.size else 0.0
    return out


def pin_discrepancies(plant: LurePlant, mults: MultiplierSet, spec: SectorSlopeSpec,
                      criterion: str = "thm2", tol: float = AGREEMENT_TOL) -> list:
    """Compare the two assembly modes one decision variable at a time.

    Returns ``(variable, block, relative difference)`` for every block where
    the closed form departs from the structural route by more than ``tol``;
    offending blocks are logged.
    """
    found = []
    parts = {"P": replace(MultiplierSet.zeros(plant.n, plant.n_q), P=mults.P)}
    for k in DIAGONAL_NAMES:
        if criterion == "thm1" and k in ("L", "Lt"):
            continue
        parts[k] = replace(MultiplierSet.zeros(plant.n, plant.n_q), **{k: getattr(mults, k)})
    for name, part in parts.items():
        Gs = assemble_structural(plant, part, spec, criterion)
        Gc = assemble_closed_form(plant, part, spec, criterion)
        for block, diff in block_differences(plant, Gs, Gc).items():
            if diff > tol:
                found.append((name, block, diff))
    for name, block, diff in found:
        logger.info("closed form differs from structural in block G%s (%s terms): %.3g",
                    block, name, diff)
    return found
