"""rdlab: reaction-diffusion particle systems on finite graphs, their exact
event-driven simulation, and empirical verification of their diffusion limit."""

__version__ = "0.1.0"

from ._rng import RngState, RngStream
from .graph_kernel import SiteKernel, as_density, discrete_laplacian, total_mass
from .rate_synthesis import (
    ModelParams,
    apply_carre_du_champ_bruteforce,
    apply_generator_bruteforce,
    birth_rate,
    death_rate,
    discrete_coefficients,
    drift_fn,
    error_term,
    limit_coefficients,
    variance_gn,
)
from .ctmc_engine import (
    AbsorbedStateError,
    EnsembleStats,
    Event,
    Trajectory,
    event_rates,
    initial_configuration,
    simulate,
    simulate_ensemble,
    step,
)
from .coupling import (
    CoupledState,
    coupled_step,
    domination_run,
    hitting_bound_estimate,
    symmetric_walk_hit_estimate,
)
from .scaling_analysis import (
    ReactionPair,
    ScalingExponents,
    analyze,
    detect_orders,
    rescaled_operators,
    simulate_rescaled,
    solve_exponents,
)
from .sde_reference import (
    SDESpec,
    em_step,
    moment_oracle_linear,
    simulate_path,
    simulate_paths,
)
from .diagnostics import (
    TestReport,
    convergence_sweep,
    dynkin_residual,
    ks_distance,
    moment_compare,
    pair_residual,
    qv_test,
)


def set_threads(count: int) -> None:
    """Set the worker thread count; results never depend on it."""
    import numba

    numba.set_num_threads(count)
