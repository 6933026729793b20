"""Deterministic closed-loop simulator for direct MIMO adaptive control with
regressor-extension least-squares estimation and singularity-free gain
recovery."""

from .closed_loop import (
    IdealGains,
    PlantSpec,
    ReferenceSpec,
    Setpoint,
    ideal_gains,
)
from .config import SimConfig, config_reference, load_config, parse_config_text
from .errors import (
    AssumptionViolation,
    ConfigError,
    DimensionError,
    IntegrationFault,
    MracSimError,
    RankError,
    SingularAdjugateError,
    StateCorruptionError,
)
from .sim import (
    ScenarioMetrics,
    SimTrace,
    emit_csv,
    emit_plot_script,
    metrics_from_trace,
    parse_csv,
    render_csv,
    run_scenario,
    scenario_gains,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation",
    "ConfigError",
    "DimensionError",
    "IdealGains",
    "IntegrationFault",
    "MracSimError",
    "PlantSpec",
    "RankError",
    "ReferenceSpec",
    "ScenarioMetrics",
    "Setpoint",
    "SimConfig",
    "SimTrace",
    "SingularAdjugateError",
    "StateCorruptionError",
    "config_reference",
    "emit_csv",
    "emit_plot_script",
    "ideal_gains",
    "load_config",
    "metrics_from_trace",
    "parse_config_text",
    "parse_csv",
    "render_csv",
    "run_scenario",
    "scenario_gains",
    "__version__",
]
