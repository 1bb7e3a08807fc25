"""Criterion catalog, single point analysis and the sector bound bisection."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import lmi, sdp
from .sdp import FEASIBLE, INDETERMINATE, Certificate, Tolerances
from .system import EXAMPLE_IDS, LurePlant, SectorSlopeSpec, example, spectral_radius

logger = logging.getLogger(__name__)

CRITERIA = lmi.CRITERIA
XI_LO = 1e-6
XI_HI_START = 1.0
XI_CAP = 2.0 ** 30
DEFAULT_TOL = 1e-4
ODD_LABEL = "valid only for odd phi"

# Reference maximal sector bounds, Examples 1..6. Rows 3-5 come from
# Lyapunov functions not reproduced here and are shown for reference only.
REFERENCE_TABLE = {
    "circle": (1.0273, 0.18358, 0.21792, 2.91387, 0.03660, 0.03716),
    "tsypkin": (1.0273, 0.18358, 0.21792, 2.91387, 0.03660, 0.03716),
    "haddad": (1.0273, 0.18358, 0.21792, 2.91387, 0.03660, 0.03716),
    "kapila": (1.0273, 0.18358, 0.21792, 2.91387, 0.03660, 0.03716),
    "park": (1.7252, 0.18358, 0.21792, 2.91387, 0.03660, 0.03716),
    "thm1": (2.4475, 0.73082, 0.30203, 43.40412, 19.18289, 0.04613),
    "thm2": (2.5576, 0.73082, 0.83686, 43.40412, 19.18289, 0.18975),
}
COMPUTED_ROWS = CRITERIA
STATIC_ROWS = ("haddad", "kapila", "park")


@dataclass(frozen=True)
class Criterion:
    tag: str

    def __post_init__(self):
        if self.tag not in CRITERIA:
            raise ValueError(f"unknown criterion {self.tag!r}; choose from {CRITERIA}")

    @property
    def free_diagonals(self) -> tuple:
        return lmi.FREE_DIAGONALS[self.tag]

    @property
    def full_P(self) -> bool:
        return lmi.FULL_P[self.tag]

    @property
    def slope_restricted(self) -> bool:
        """circle and tsypkin cover the whole sector class (mu = inf)."""
        return self.tag in ("thm1", "thm2")

    @property
    def odd_only(self) -> bool:
        return self.tag == "thm2"

    def spec(self, n_q: int, xi: float, slope_scale: float) -> SectorSlopeSpec:
        if self.slope_restricted:
            return SectorSlopeSpec.uniform(n_q, xi, slope_scale)
        return SectorSlopeSpec.uniform(n_q, xi, slope_scale, mu=np.inf)


@dataclass(eq=False)
class AnalysisResult:
    feasible: bool
    certificate: Certificate
    xi: float
    mu: float
    wall_time: float

    @property
    def status(self) -> str:
        return self.certificate.status


class BisectionError(RuntimeError):
    pass


def analyze(plant: LurePlant, xi: float, criterion: str, slope_scale: float,
            structure: str = "scalar", tolerances: Tolerances | None = None) -> AnalysisResult:
    if not xi > 0:
        raise ValueError(f"xi must be positive, got {xi}")
    crit = Criterion(criterion)
    t0 = time.perf_counter()
    spec = crit.spec(plant.n_q, xi, slope_scale)
    problem = sdp.build_problem(plant, spec, criterion, structure, tolerances)
    cert = sdp.solve_feasibility(problem)
    mu = float(spec.mu[0]) if spec.n_q else float("inf")
    return AnalysisResult(cert.status == FEASIBLE and cert.verified, cert, float(xi), mu,
                          time.perf_counter() - t0)


@dataclass(eq=False)
class BisectionResult:
    xi_star: float
    xi_hi: float
    certificate: Certificate
    upper_status: str
    flagged: bool
    evaluations: int
    wall_time: float


def max_sector_bisect(plant: LurePlant, criterion: str, slope_scale: float,
                      tol_xi: float = DEFAULT_TOL, structure: str = "scalar",
                      tolerances: Tolerances | None = None) -> BisectionResult:
    """Largest certified sector bound, to within ``tol_xi``.

    Indeterminate solves count as infeasible and flag the run.
    """
    if not tol_xi > 0:
        raise ValueError("tol_xi must be positive")
    if plant.n and spectral_radius(plant.A) >= 1.0:
        raise BisectionError("plant is not nominally stable (spectral radius of A >= 1)")
    t0 = time.perf_counter()
    count = 0
    flagged = False

    def probe(xi):
        nonlocal count, flagged
        count += 1
        r = analyze(plant, xi, criterion, slope_scale, structure, tolerances)
        if r.certificate.status == INDETERMINATE:
            flagged = True
            logger.warning("indeterminate solve for %s at xi=%.10g", criterion, xi)
        return r

    lo = probe(XI_LO)
    if not lo.feasible:
        raise BisectionError(f"xi={XI_LO} is not certified feasible for {criterion}")
    lo_xi, lo_cert = XI_LO, lo.certificate
    hi_xi = XI_HI_START
    while True:
        r = probe(hi_xi)
        if not r.feasible:
            hi_status = r.status
            break
        lo_xi, lo_cert = hi_xi, r.certificate
        hi_xi *= 2.0
        if hi_xi > XI_CAP:
            raise BisectionError(f"{criterion}: unbounded above at cap {XI_CAP:g}")
    while hi_xi - lo_xi >= tol_xi:
        mid = 0.5 * (lo_xi + hi_xi)
        r = probe(mid)
        if r.feasible:
            lo_xi, lo_cert = mid, r.certificate
        else:
            hi_xi, hi_status = mid, r.status
    return BisectionResult(lo_xi, hi_xi, lo_cert, hi_status, flagged, count,
                           time.perf_counter() - t0)


def monotonicity_scan(plant: LurePlant, criterion: str, slope_scale: float, xi_max: float,
                      points: int = 20, structure: str = "scalar") -> list:
    """Grid points xi where feasibility at xi is not matched at 0.5 xi."""
    grid = np.linspace(xi_max / points, xi_max, points)
    bad = []
    for xi in grid:
        if analyze(plant, xi, criterion, slope_scale, structure).feasible:
            if not analyze(plant, 0.5 * xi, criterion, slope_scale, structure).feasible:
                bad.append(float(xi))
    for xi in bad:
        logger.warning("%s: feasible at xi=%.10g but not at xi/2", criterion, xi)
    return bad


def _cell(args):
    criterion, ex_id, tol_xi, structure = args
    plant, c = example(ex_id)
    try:
        res = max_sector_bisect(plant, criterion, c, tol_xi, structure)
    except BisectionError as exc:
        return criterion, ex_id, None, str(exc)
    return criterion, ex_id, res, None


@dataclass(eq=False)
class TableReport:
    values: dict
    results: dict
    errors: dict
    tol_xi: float
    structure: str

    def relative_deviation(self, criterion: str, ex_id: int) -> float:
        ref = REFERENCE_TABLE[criterion][ex_id - 1]
        val = self.values[criterion][ex_id]
        return abs(val - ref) / ref if val is not None else float("nan")

    def max_deviation(self) -> float:
        return max(self.relative_deviation(c, e) for c in self.values for e in self.values[c])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        ids = sorted(next(iter(self.values.values())))
        w.writerow(["criterion", "source"] + [f"ex{e}" for e in ids] + ["note"])
        for crit, row in self.values.items():
            note = ODD_LABEL if crit == "thm2" else ""
            w.writerow([crit, "computed"] + [_fmt(row[e]) for e in ids] + [note])
            w.writerow([crit, "reference"] + [_fmt(REFERENCE_TABLE[crit][e - 1]) for e in ids] + [note])
            w.writerow([crit, "rel_dev"] + [_fmt(self.relative_deviation(crit, e)) for e in ids] + [""])
        for crit in STATIC_ROWS:
            w.writerow([crit, "reference"] + [_fmt(REFERENCE_TABLE[crit][e - 1]) for e in ids]
                       + ["static reference, not computed"])
        return buf.getvalue()

    def to_json(self) -> str:
        cells = {}
        for crit, row in self.results.items():
            for e, res in row.items():
                key = f"{crit}/ex{e}"
                if res is None:
                    cells[key] = {"error": self.errors[crit][e]}
                    continue
                cells[key] = {
                    "xi_star": res.xi_star,
                    "xi_hi": res.xi_hi,
                    "upper_status": res.upper_status,
                    "flagged": res.flagged,
                    "evaluations": res.evaluations,
                    "reference": REFERENCE_TABLE[crit][e - 1],
                    "note": ODD_LABEL if crit == "thm2" else "",
                    "certificate": res.certificate.to_dict(),
                }
        return json.dumps({"tol_xi": self.tol_xi, "structure": self.structure, "cells": cells}, indent=2)


def _fmt(x) -> str:
    return "" if x is None else f"{x:.10g}"


def table1(tol_xi: float = DEFAULT_TOL, structure: str = "scalar", criteria=CRITERIA,
           examples=EXAMPLE_IDS, workers: int | None = None) -> TableReport:
    """Bisect every (criterion, example) cell; cells run in separate processes
    unless ``workers == 1``."""
    jobs = [(c, e, tol_xi, structure) for c in criteria for e in examples]
    if workers == 1:
        out = [_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_cell, jobs))
    values = {c: {} for c in criteria}
    results = {c: {} for c in criteria}
    errors = {c: {} for c in criteria}
    for crit, e, res, err in out:
        values[crit][e] = res.xi_star if res is not None else None
        results[crit][e] = res
        errors[crit][e] = err
    return TableReport(values, results, errors, tol_xi, structure)
