"""Steady thermoelectric (thermistor) system with Seebeck coupling, solved by
P1 finite elements and damped Picard iteration, plus its large-conductivity
shadow limit."""
from .coefficients import (
    CoefficientModel, ProblemData, ValidationReport, h_from_spec, make_model,
    validate_hypotheses,
)
from .diagnostics import estimate_trace_constants, mms_study, newton_oracle
from .fem import ScalarField, norms, solve_spd
from .mesh import TriMesh, generate_rect_mesh, load_mesh, save_mesh
from .picard import PicardReport, energy_balance, run_picard, smallness_ledger
from .shadow import implicit_equation_residual, k_sweep, solve_shadow
from .solvers import joule_source, solve_potential, solve_temperature

__version__ = "0.1.0"

__all__ = [
    "CoefficientModel", "PicardReport", "ProblemData", "ScalarField", "TriMesh",
    "ValidationReport", "energy_balance", "estimate_trace_constants", "generate_rect_mesh",
    "h_from_spec", "implicit_equation_residual", "joule_source", "k_sweep", "load_mesh",
    "make_model", "mms_study", "newton_oracle", "norms", "run_picard", "save_mesh",
    "smallness_ledger", "solve_potential", "solve_shadow", "solve_spd", "solve_temperature",
    "validate_hypotheses",
]
