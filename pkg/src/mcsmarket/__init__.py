"""Two-stage (futures + spot) service-trading market simulator for mobile
crowdsensing: stable many-to-many matching with risk gates, ant-colony path
pre-planning, budgeted knapsack selection, spot recruitment, per-worker DQN
route decisions, and a seeded Monte-Carlo benchmark harness."""

from .model import (
    EconomicConfig,
    Location,
    Scenario,
    TaskSpec,
    UncertaintyParams,
    WorkerSpec,
    validate_scenario,
)
from .rng import SeededRng
from .scenario import (
    GeneratorConfig,
    benchmark_config,
    generate_scenario,
    load_scenario,
    load_worker_csv,
    save_scenario,
    table2_config,
)

__all__ = [
    "EconomicConfig",
    "GeneratorConfig",
    "Location",
    "Scenario",
    "SeededRng",
    "TaskSpec",
    "UncertaintyParams",
    "WorkerSpec",
    "benchmark_config",
    "generate_scenario",
    "load_scenario",
    "load_worker_csv",
    "save_scenario",
    "table2_config",
    "validate_scenario",
]
