"""AC optimal power flow by feasible point pursuit and successive convex approximation."""

from importlib.resources import files
from pathlib import Path

from .analysis import SolveReport, brute_force_opf, evaluate_residuals, recover_generation, validate_report
from .casefile import CaseError, parse_case
from .driver import SolverOptions, run_diagnosis, run_fpp, run_sca, warm_start
from .network import Bus, GenLimits, Line, NetworkModel, ResUnit
from .pipeline import diagnose, solve
from .problem import CostModel, GenCost, ResCost, assemble

__version__ = "0.1.0"


def bundled_case(name: str) -> Path:
    """Path of a case file shipped with the package (e.g. ``"wb5.m"``)."""
    path = Path(str(files(__package__) / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled case {name!r}")
    return path


__all__ = [
    "Bus", "CaseError", "CostModel", "GenCost", "GenLimits", "Line", "NetworkModel", "ResCost", "ResUnit",
    "SolveReport", "SolverOptions", "assemble", "brute_force_opf", "bundled_case", "diagnose",
    "evaluate_residuals", "parse_case", "recover_generation", "run_diagnosis", "run_fpp", "run_sca",
    "solve", "validate_report", "warm_start",
]
