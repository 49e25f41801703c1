"""Finite-volume drift-diffusion systems with nonlocal potentials and
non-dissipative Robin boundary fluxes."""

from .config import ConfigError, RunConfig
from .flux import (
    CorrosionFluxParams,
    FluxKind,
    FluxSpec,
    MeasureAtomList,
    check_bounded_nondissipative,
    check_growth_class,
    corrosion_flux,
    cutoff,
    eval_flux,
    measure_drift_flux,
    truncate_flux,
    zero_flux,
)
from .grid import Grid1D, Grid2D, build_grid_1d, build_grid_2d, cell_integral
from .potential import (
    MollifiedPoisson2D,
    MollifierSpec,
    PotentialField,
    RobinPoisson1D,
    RobinPoissonSpec,
    SignConvention,
    SolverError,
    apply_potential_operator,
    green_kernel,
    mollify_extend,
    solve_dirichlet_poisson_2d,
    solve_robin_poisson_1d,
)
from .solver import (
    Model,
    SpeciesSpec,
    StepParams,
    SystemState,
    assemble_step,
    initial_state,
    mass_budget,
    run_simulation,
    sg_face_flux,
    simulate,
)

__version__ = "0.1.0"
