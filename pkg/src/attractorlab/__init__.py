"""attractorlab: a numerical laboratory for attractor convergence rates of
singularly perturbed 1D parabolic problems reducing to finite ODEs."""

from .coupling import (
    CouplingPair,
    GapReport,
    make_coupling,
    nonlinearity_gap,
    norm_nonequivalence,
    projection_gap,
    resolvent_gap,
    resolvent_gap_dense,
)
from .dynamics import (
    AttractorCloud,
    Equilibrium,
    Isomorphism,
    attractor_approximate,
    equilibrium_rate,
    find_equilibria,
    hausdorff,
    hausdorff_functions,
    invariance_defect,
    step_full,
    time_one_maps,
)
from .lab import ConvergenceReport, SweepConfig, default_config, emit_report, fit_rate, run_sweep
from .manifold import (
    GraphSection,
    ManifoldConstants,
    check_constants,
    graph_transform_step,
    make_y_coordinates,
    read_graph_section,
    reduced_rhs,
    solve_fixed_point,
    zero_section,
)
from .nonlinearity import FSpec, cutoff_cubic, zero_fspec
from .operators import (
    Coefficients,
    Grid,
    LimitOperator,
    OperatorDisc,
    assemble,
    energy_inner,
    l2_inner,
    limit_operator,
)
from .problems import (
    ProblemSetup,
    build_setup,
    homogenization_setup,
    localized_setup,
    synthetic_setup,
)
from .shadowing import (
    DiscreteMap,
    PseudoTrajectory,
    attractor_bound,
    defect,
    lpsp_estimate,
    make_pseudo_orbit,
    shadow,
)
from .spectral import (
    EstimateReport,
    SpectralData,
    SpectralSplit,
    eigendecompose,
    fractional_apply,
    semigroup_apply,
    split,
    verify_linear_estimates,
)

__version__ = "0.1.0"
