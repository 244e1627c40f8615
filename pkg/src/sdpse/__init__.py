"""SDP relaxation of AC power-system state estimation with WLS comparison and rank diagnostics."""

from .errors import (
    CaseError,
    EstimationError,
    ObservabilityError,
    PowerFlowError,
    SdpseError,
    SolverError,
)
from .measurement import MeasurementSet, MeterKind
from .network import build_admittance, load_case
from .powerflow import solve_newton
from .rank import recover_rank1, spectrum, trailing_ratio
from .relaxation import assemble
from .solver import solve, verify_certificate
from .wls import solve_wls

__version__ = "0.1.0"

__all__ = [
    "CaseError",
    "EstimationError",
    "MeasurementSet",
    "MeterKind",
    "ObservabilityError",
    "PowerFlowError",
    "SdpseError",
    "SolverError",
    "assemble",
    "build_admittance",
    "load_case",
    "recover_rank1",
    "solve",
    "solve_newton",
    "solve_wls",
    "spectrum",
    "trailing_ratio",
    "verify_certificate",
]
