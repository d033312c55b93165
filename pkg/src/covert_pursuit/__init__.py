"""Covert, energy-aware trajectory planning for a solar-powered monitor UAV
trailing a suspicious target."""

from .config import RunConfig, load_config, parse_config
from .online import OnlineOptions, PredictorMode, TargetPredictor, predict_target, run_online
from .oracle import brute_force_small, finite_diff_gradient, lipschitz_cell_bound
from .pdcae import Scheme, SolverOptions, run_pdcae, solve_offline
from .power import (
    DomainError,
    PropulsionParams,
    SolarParams,
    ThrustParams,
    fit_solar_linear,
    propulsion_power_exact,
    solar_power_exact,
    solve_q_exact,
    thrust_power,
)
from .report import RunReport, audit_plan, report_json, write_report
from .scenario import (
    ScenarioConfig,
    TargetTrack,
    TrajectoryPlan,
    generate_target_track,
    initial_plan,
    stationary_track,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError", "OnlineOptions", "PredictorMode", "PropulsionParams", "RunConfig", "RunReport",
    "ScenarioConfig", "Scheme", "SolarParams", "SolverOptions", "TargetPredictor", "TargetTrack",
    "ThrustParams", "TrajectoryPlan", "audit_plan", "brute_force_small", "finite_diff_gradient",
    "fit_solar_linear", "generate_target_track", "initial_plan", "lipschitz_cell_bound", "load_config",
    "parse_config", "predict_target", "propulsion_power_exact", "report_json", "run_online", "run_pdcae",
    "solar_power_exact", "solve_offline", "solve_q_exact", "stationary_track", "thrust_power", "write_report",
]
