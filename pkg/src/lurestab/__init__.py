"""Absolute stability of discrete-time Lur'e systems with sector-bounded,
slope-restricted (and odd) nonlinearities via Lur'e-Postnikov LMIs."""

from .criteria import AnalysisResult, Criterion, analyze, max_sector_bisect, table1
from .lmi import LiftedMatrices, MultiplierSet, assemble_closed_form, assemble_structural
from .nonlin import DiagonalNonlinearity, make_test_nonlinearity
from .sdp import Certificate, LmiFeasibilityProblem, solve_feasibility, sym_eig, verify_certificate
from .sim import Trajectory, check_decrease, lyapunov_value, simulate
from .system import LurePlant, SectorSlopeSpec, TransferFunction, example

__all__ = [
    "AnalysisResult", "Certificate", "Criterion", "DiagonalNonlinearity", "LiftedMatrices",
    "LmiFeasibilityProblem", "LurePlant", "MultiplierSet", "SectorSlopeSpec", "Trajectory",
    "TransferFunction", "analyze", "assemble_closed_form", "assemble_structural",
    "check_decrease", "example", "lyapunov_value", "make_test_nonlinearity",
    "max_sector_bisect", "simulate", "solve_feasibility", "sym_eig", "table1",
    "verify_certificate",
]
__version__ = "0.1.0"
