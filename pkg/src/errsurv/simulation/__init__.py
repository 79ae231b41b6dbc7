"""Monte Carlo study: scenario configs, cohort generator, replication runner."""

from .config import Normal, NormalMixture, ScenarioConfig, StudentT, load_scenario
from .generate import LatentTruth, generate_cohort
from .presets import example_dataset, get_preset, preset_names
from .run import (
    ESTIMATORS,
    MetricsTable,
    ScenarioResult,
    fit_replication,
    run_scenario,
    summarize,
    type_one_error,
)

__all__ = [
    "Normal", "NormalMixture", "ScenarioConfig", "StudentT", "load_scenario", "LatentTruth",
    "generate_cohort", "example_dataset", "get_preset", "preset_names", "ESTIMATORS",
    "MetricsTable", "ScenarioResult", "fit_replication", "run_scenario", "summarize",
    "type_one_error",
]
