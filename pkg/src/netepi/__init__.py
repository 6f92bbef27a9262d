"""Deterministic ODE models of spreading processes on heterogeneous,
fully rewiring random networks, cross-validated against an agent-based
Monte-Carlo simulator."""

from .abm import (
    EnsembleSummary,
    NetworkRealization,
    generate_network,
    run_ensemble,
    simulate_epidemic,
    summarize_trajectories,
)
from .analysis import (
    CoverageReport,
    FitResult,
    SobolResult,
    compare_ode_abm,
    fit_parameters,
    phase_series,
    sobol_first_order,
)
from .config import SimulationSpec, parse_config, parse_config_data, run_trajectory
from .degree import (
    DegreeDistribution,
    from_weights,
    mean_degree,
    sample_degree,
    sample_degrees,
    truncated_power_law,
)
from .errors import ConfigError, DomainError, NetepiError, StabilityError
from .mixing import (
    LinkProbabilities,
    binomial_pmf,
    closed_form_hazard,
    infection_hazard,
    infection_hazard_two,
    infection_prob_single,
    infection_prob_two,
    link_count_pmf,
    multinomial_pmf,
    normal_approx_pmf,
)
from .ode import (
    BipartiteSIR,
    ClassicSIR,
    EpidemicParams,
    HivHetero,
    HivMsm,
    StratifiedSIR,
    StratifiedState,
    Trajectory,
    TreatmentSchedule,
    TwoTypeSIR,
    build_model,
    classic_sir_rhs,
    current_link_probability,
    integrate,
)

__version__ = "0.1.0"
