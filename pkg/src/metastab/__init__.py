"""Numerical laboratory for metastability of the dilute mean-field Ising model.

Exact potential theory on enumerated state spaces, the lumped 1-D
magnetization chain with its sharp large-N asymptotics, two-sided variational
capacity bounds, disorder-concentration statistics, and Metropolis simulation
with hitting-time instrumentation.
"""

from .model import (
    BETA_CRITICAL,
    Disorder,
    ModelParams,
    SpinConfig,
    delta_term,
    flip_increment,
    hamiltonian_cw_canonical,
    hamiltonian_cw_pairsum,
    hamiltonian_rdcw,
    magnetization,
    sample_disorder,
)
from .landscape import (
    DeltaTooLarge,
    EpsTooLarge,
    FewerThanThreeRoots,
    Landscape,
    MagGrid,
    WellDecomposition,
    critical_points,
    entropy_terms,
    free_energy,
    free_energy_value,
    gamma_grid,
    monotone_crossing_bound,
    nearest_grid_point,
    well_decomposition,
)
from .lumped import (
    MagnetizationChain,
    build_chain,
    equilibrium_potential,
    log_capacity,
    log_capacity_sharp,
    log_mean_hitting,
    log_mean_hitting_sharp,
    mean_hitting_by_solve,
)
from .exact import FullChain, NTooLarge, SolverError
from .variational import (
    LevelFlow,
    dirichlet_upper,
    superharmonic_full,
    superharmonic_lumped,
    thomson_lower,
    transition_ratio_bound,
    unit_flow,
    validate_flow,
)
from .concentration import (
    TheoremConstants,
    concentration_report,
    constants,
    g_indicator,
    g_uniform,
    log_first_moment,
    partition_stats,
)
from .dynamics import (
    AllTimedOut,
    HittingEstimate,
    LocalFieldState,
    estimate_hitting,
    mc_step,
    sample_on_level,
)
from .harness import ExperimentConfig, RunReport, run_experiment

__version__ = "0.1.0"
