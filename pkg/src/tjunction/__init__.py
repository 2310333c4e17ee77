"""Belief-space planning and experience transfer for an occluded T-intersection.

The package has three layers: a generic discrete POMDP core (`pomdp`), the
intersection domain built on it (`domain`, `simulate`), and the learning and
transfer machinery that moves Dirichlet transition posteriors between traffic
environments (`learning`, `transfer`, `bench`).
"""

from .bench import (
    METHOD_EXPLICIT,
    METHOD_FILTER,
    METHOD_NEAREST,
    METHOD_POOLED,
    METHODS,
    ExperimentPlan,
    TrainedStore,
    derive_seed,
    draw_subset,
    evaluate_method,
    load_store,
    run_experiment,
    summarize_records,
    train_all,
)
from .domain import (
    ACTIONS,
    AGGRESSIVENESS,
    BEHAVIOR_LEVELS,
    BLOCKINGS,
    DENSITY_LEVELS,
    EGO_POSITIONS,
    FACTOR_SIZES,
    N_ACTIONS,
    N_STATES,
    RIVAL_POSITIONS,
    SIGHTLINES,
    VISIBILITY_LEVELS,
    EnvironmentState,
    FactoredState,
    NoiseConfig,
    RewardSpec,
    all_environment_states,
    all_states,
    build_observation_model,
    build_pomdp_model,
    build_reward_model,
    decode_state,
    encode_state,
    is_collision_state,
)
from .learning import (
    DegenerateRowError,
    DirichletPolicyParams,
    DirichletPrior,
    DirichletTransitionLearner,
    RivalChannel,
    ScenarioLog,
    TransitionCounts,
    ingest_scenario,
    learn_policy_params,
    make_tracking_model,
    mean_transition,
    posterior,
    read_scenario_logs,
    write_scenario_logs,
)
from .pomdp import (
    PomdpModel,
    QMatrix,
    ZeroLikelihoodError,
    belief_update,
    belief_update_or_reset,
    best_action,
    most_likely_state,
    solve_qmdp,
    uniform_belief,
)
from .simulate import (
    RunMetrics,
    ScenarioConfig,
    SimParams,
    run_scenario,
    score_metrics,
    write_metrics_csv,
)
from .transfer import (
    EmptyLibraryError,
    ExperienceFilter,
    ExperienceLibrary,
    KernelConfig,
    NearestNeighborPolicy,
    filter_policy,
    kernel_weights,
    load_library,
    nearest_neighbor_policy,
    pooled_policy,
    save_library,
)

__version__ = "0.1.0"
