"""Weak monotone rearrangement on the real line.

Solvers, verifiers and experiment tooling for the barycentric weak optimal
transport problem between finitely supported measures: the convex-order
toolkit, the rearrangement itself, martingale coupling machinery, the
reverse relaxation, and stability ladders.
"""

from .errors import (
    CompositionError,
    ConsistencyError,
    CouplingError,
    DomainError,
    HypothesisError,
    OrderError,
    PreconditionError,
    SizeError,
    SolverError,
    StructureError,
    WmrError,
)
from .martingale import (
    Coupling,
    MartingaleCoupling,
    MartingaleDecomposition,
    barycenter_map,
    build_martingale_coupling,
    competitor_curve,
    compose_with_map,
    coupling_to_csv,
    decompose_martingale,
    find_two_point_improvement,
    identity_coupling,
    optimality_certificate,
    parse_coupling_csv,
    product_coupling,
    supports_overlap,
)
from .measures import (
    DiscreteMeasure,
    Interval,
    PiecewiseLinearFn,
    convex_order_leq,
    irreducible_components,
    lower_convex_envelope,
    mean,
    measure_from_potential,
    measures_close,
    pl_max,
    potential,
    potential_at,
    pushforward,
    quantile,
    quantize,
    read_measure_csv,
    support_scale,
    wasserstein,
    write_measure_csv,
)
from .reverse import (
    ReverseSolution,
    convex_order_max_map,
    convex_order_min_with_maps,
    quantile_assignment,
    residual_order_check,
    reverse_optimizer,
)
from .stability import (
    PerturbationLadder,
    StabilityReport,
    StabilityRung,
    TailTrim,
    eta_transfer,
    finite_support_approx,
    run_stability_experiment,
    truncate_mean_preserving,
)
from .wmr import (
    CostSpec,
    MonotoneMap,
    WeakSolution,
    check_maximality,
    map_decomposition,
    oracle_solve,
    project_admissible,
    smooth_strictify,
    solve_weak_transport,
    value,
    verify_admissible,
    verify_slope1_characterization,
    weak_monotone_rearrangement,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
