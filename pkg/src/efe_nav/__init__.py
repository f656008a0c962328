"""Gaussian approximations of nonlinear sensors inside expected-free-energy planning agents."""
from .efe import (
    SINGULARITY_PENALTY,
    ControlPrior,
    EfeTerms,
    GoalPrior,
    HorizonObjective,
    ambiguity_closed_form,
    ambiguity_generic,
    batched_efe_terms,
    efe_horizon,
    efe_horizon_breakdown,
    efe_step,
    efe_terms,
    risk,
)
from .filtering import FilterState, filter_step, predict, update
from .gaussian import (
    Gaussian,
    JointApprox,
    NotPSDError,
    SingularMatrixError,
    condition_obs_given_state,
    gaussian_entropy,
    kl_gaussian,
    symmetric_sqrt,
)
from .models import (
    LinearDynamics,
    LinearSensor,
    MeasurementModel,
    RangeBearingSensor,
    SensorSingularityError,
    SensorStation,
    build_double_integrator,
    wrap_angle,
)
from .planners import Agent, AgentKind, ControlPlan, PlannerConfig, plan_efe, plan_mpc, receding_horizon_step
from .scenario import ScenarioError, ScenarioFile
from .sim import (
    Heatmap,
    MonteCarloSummary,
    Scenario,
    TrialRecord,
    efe_heatmap,
    run_monte_carlo,
    run_trial,
    step_env,
)
from .transforms import (
    TAYLOR1,
    TAYLOR2,
    Taylor1,
    Taylor2,
    UnscentedParams,
    kind_from_name,
    mc_moment_oracle,
    mc_moments,
    sigma_points,
    transform,
)

__version__ = "0.1.0"
