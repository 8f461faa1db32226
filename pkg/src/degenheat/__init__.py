"""Degenerate heat equation with Robin boundary flux: discretization,
observability diagnostics, and impulse-control synthesis."""

from .carleman import (
    CarlemanParams,
    TheoryConstants,
    carleman_bound_check,
    check_energy_ode,
    check_three_point,
    frequency,
    gauge_transform,
    interpolation_exponent,
    symmetric_form,
    theoretical_constants,
    weight_phi,
)
from .control import (
    CostEstimate,
    SynthesisReport,
    estimate_cost,
    functional_value,
    gramian_apply,
    synthesize,
)
from .grid_operator import (
    DegenOperator,
    Field,
    Grid,
    ProblemSpec,
    assemble_operator,
    build_grid,
    m_inner,
    m_norm,
    omega_indicator,
    quadratic_form,
    weighted_norms,
)
from .observability import (
    ObservabilityReport,
    check_eps_split,
    check_observation,
    fit_constants,
    local_norm,
    make_ensemble,
)
from .semigroup import (
    SpectralDecomposition,
    Trajectory,
    evolve,
    propagate_field,
    propagate_spectral,
    solve_impulsive,
    spectral_decomposition,
)

__version__ = "0.1.0"

__all__ = [
    "CarlemanParams",
    "CostEstimate",
    "DegenOperator",
    "Field",
    "Grid",
    "ObservabilityReport",
    "ProblemSpec",
    "SpectralDecomposition",
    "SynthesisReport",
    "TheoryConstants",
    "Trajectory",
    "assemble_operator",
    "build_grid",
    "carleman_bound_check",
    "check_energy_ode",
    "check_eps_split",
    "check_observation",
    "check_three_point",
    "estimate_cost",
    "evolve",
    "fit_constants",
    "frequency",
    "functional_value",
    "gauge_transform",
    "gramian_apply",
    "interpolation_exponent",
    "local_norm",
    "m_inner",
    "m_norm",
    "make_ensemble",
    "omega_indicator",
    "propagate_field",
    "propagate_spectral",
    "quadratic_form",
    "solve_impulsive",
    "spectral_decomposition",
    "symmetric_form",
    "synthesize",
    "theoretical_constants",
    "weight_phi",
    "weighted_norms",
]
