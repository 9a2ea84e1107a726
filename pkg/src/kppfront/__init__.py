"""Numerical laboratory for KPP front propagation in periodic media."""

from .cell import (
    CellSolution,
    EigenPair,
    dense_principal_eigenpair,
    effective_diffusion,
    effective_drift,
    correctors,
    invariant_density,
    principal_eigenpair,
    solve_cell,
)
from .errors import ConfigError, KPPFrontError
from .frontsim import FitResult, FrontTrace, SimConfig, extract_front, fit_bramson, run_simulation
from .halfspace import (
    HalfspaceConfig,
    ProbeSeries,
    check_exponential_tail,
    fit_power_law,
    profile_covariance,
    run_linear_frame,
    run_log_frame,
)
from .speeds import (
    Atlas,
    DirectionRecord,
    bramson_coefficient,
    build_atlas,
    direction_record,
    extended_speed,
    minimal_speed,
    spreading_speed,
    verify_minimizer_theory,
)
from .torus import (
    MuSpec,
    PeriodicScalarField,
    PeriodicVectorField,
    TorusGrid,
    build_field,
    divergence,
    gradient,
    integrate,
    laplacian,
)

__version__ = "0.1.0"
