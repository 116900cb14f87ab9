"""Path-dependent stochastic control: paths, pathwise calculus, value functions and lifted HJB solves."""

from __future__ import annotations

__version__ = "0.1.0"

from .paths import (
    DomainError,
    GaugePoint,
    Path,
    TimeGrid,
    d_infinity,
    oscillation,
    polygonal_from_nodes,
    seminorm_t,
    stop,
    sup_norm,
)
from .forward import Weight, integrate_ibp, integrate_regularized, lifted_coordinates
from .functional import (
    CylindricalFunctional,
    PathFunctional,
    cylindrical_derivatives,
    horizontal_derivative,
    ito_residual,
    vertical_derivative,
)
from .coefficients import CoefficientSpec, CylindricalCoefficient
from .mollify import MollifierConfig, error_bound_rhs, mollified_coefficient, regularity_check
from .sde import ControlledSDE, PiecewiseConstantControl, SimConfig, continuity_diagnostic, simulate, sup_moment
from .control import ControlProblem, ValueEstimate, dpp_residual, fixed_control_value, hamiltonian, reward, value
from .lifted import GridConfig, LiftedProblem, build_lifted, reconstruct, solve, verify_bounds
from .gauge import (
    INF,
    GaugeValue,
    borwein_preiss,
    chi_infinity,
    kappa_derivatives,
    kappa_infinity,
    phi_comparison,
    rho_infinity,
    verify_vp,
)
from .viscosity import classical_residual, subsolution_lhs, supersolution_lhs, touching_report

__all__ = [
    "DomainError", "GaugePoint", "Path", "TimeGrid", "d_infinity", "oscillation", "polygonal_from_nodes",
    "seminorm_t", "stop", "sup_norm",
    "Weight", "integrate_ibp", "integrate_regularized", "lifted_coordinates",
    "CylindricalFunctional", "PathFunctional", "cylindrical_derivatives", "horizontal_derivative",
    "ito_residual", "vertical_derivative",
    "CoefficientSpec", "CylindricalCoefficient",
    "MollifierConfig", "error_bound_rhs", "mollified_coefficient", "regularity_check",
    "ControlledSDE", "PiecewiseConstantControl", "SimConfig", "continuity_diagnostic", "simulate", "sup_moment",
    "ControlProblem", "ValueEstimate", "dpp_residual", "fixed_control_value", "hamiltonian", "reward", "value",
    "GridConfig", "LiftedProblem", "build_lifted", "reconstruct", "solve", "verify_bounds",
    "INF", "GaugeValue", "borwein_preiss", "chi_infinity", "kappa_derivatives", "kappa_infinity",
    "phi_comparison", "rho_infinity", "verify_vp",
    "classical_residual", "subsolution_lhs", "supersolution_lhs", "touching_report",
]
