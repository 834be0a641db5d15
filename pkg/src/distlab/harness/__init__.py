"""Experiment harness: environments, configs, seeded sweeps and the command line."""

from .config import ConfigError, ExperimentConfig, parse_seeds
from .envs import (
    CsvTaskSpec,
    TaskData,
    acceptance_mdp,
    acceptance_policies,
    build_housing_env,
    build_insurance_env,
    build_superclass_env,
    load_csv_task,
    small_loss_env,
    synthetic_housing,
    synthetic_insurance,
    synthetic_superclass,
)
from .runner import SeedResult, aggregate_seeds, run_experiment, run_seed

__all__ = [
    "ConfigError",
    "CsvTaskSpec",
    "ExperimentConfig",
    "SeedResult",
    "TaskData",
    "acceptance_mdp",
    "acceptance_policies",
    "aggregate_seeds",
    "build_housing_env",
    "build_insurance_env",
    "build_superclass_env",
    "load_csv_task",
    "parse_seeds",
    "run_experiment",
    "run_seed",
    "small_loss_env",
    "synthetic_housing",
    "synthetic_insurance",
    "synthetic_superclass",
]
