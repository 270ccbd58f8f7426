"""Tangent lifts and Jacobi fields of completely integrable Hamiltonian systems."""

from .canonical import (
    CanonicalStructure,
    PhaseState,
    TangentCanonicalStructure,
    TangentState,
    check_lift_identities,
    hamiltonian_vf,
    poisson,
    tangent_hamiltonian_vf,
    tangent_lift,
    tangent_poisson,
)
from .cistools import (
    divergence_experiment,
    drift,
    reconstruct_action,
    reconstruct_jacobi,
    validate_cis,
    verify_persistence,
)
from .diffcore import Jet1, Jet2, grad, hess_vec
from .dsl import (
    DomainError,
    Expr,
    ParseError,
    SystemDef,
    diff,
    evaluate,
    parse_expr,
    parse_system,
    simplify,
    to_string,
)
from .flow import (
    ActionAngleState,
    IntegratorConfig,
    Trajectory,
    exact_flow_action_angle,
    integrate,
    integrate_tangent,
    rhs_base,
    rhs_tangent,
    step_midpoint,
    step_rk4,
    step_verlet,
)
from .modelzoo import builtin, kepler, oscillator, quartic

__version__ = "0.1.0"

__all__ = [
    "ActionAngleState",
    "builtin",
    "CanonicalStructure",
    "check_lift_identities",
    "diff",
    "divergence_experiment",
    "DomainError",
    "drift",
    "evaluate",
    "exact_flow_action_angle",
    "Expr",
    "grad",
    "hamiltonian_vf",
    "hess_vec",
    "integrate",
    "integrate_tangent",
    "IntegratorConfig",
    "Jet1",
    "Jet2",
    "kepler",
    "oscillator",
    "parse_expr",
    "parse_system",
    "ParseError",
    "PhaseState",
    "poisson",
    "quartic",
    "reconstruct_action",
    "reconstruct_jacobi",
    "rhs_base",
    "rhs_tangent",
    "simplify",
    "step_midpoint",
    "step_rk4",
    "step_verlet",
    "SystemDef",
    "tangent_hamiltonian_vf",
    "tangent_lift",
    "tangent_poisson",
    "TangentCanonicalStructure",
    "TangentState",
    "to_string",
    "Trajectory",
    "validate_cis",
    "verify_persistence",
]
