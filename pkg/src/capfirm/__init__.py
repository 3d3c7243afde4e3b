"""Two-stage robust day-ahead planning for a PV plant with battery storage under capacity firming."""

from .benders import run_bd, warm_start_cuts
from .campaign import CampaignSpec, SettlementRow, VariantSpec, run_campaign, settle_day
from .ccg import run_ccg
from .forecast import crps_energy, quantile_score, reliability_curve, score_forecasts, synth_day
from .io import load_config, load_day_csv
from .model import (
    BessParams,
    DayForecast,
    DispatchSchedule,
    EngagementPlan,
    InstanceConfig,
    UncertaintySetSpec,
    build_uncertainty_set,
    default_config,
    objective_value,
    penalty_cost,
    validate_engagement,
)
from .planner import controller_step, dispatch_day, oracle_plan, plan_day, simulate_controller_day
from .risk import RiskParams, dynamic_gamma, dynamic_params, dynamic_pmin, static_params
from .robust import RobustRunReport
from .solver import ModelBuilder, SolveResult, Status, solve
from .subproblem import BigM, DualSolution, build_sp, check_no_simultaneous, extract_worst_trajectory, solve_sp

__version__ = "0.1.0"
