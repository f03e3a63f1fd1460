"""Deterministic simulator for performative prediction in federated learning."""
from .core import (
    AdaptiveSampleSize,
    ConfigurationError,
    ExperimentConfig,
    FixedSampleSize,
    NumericError,
    ParameterBox,
    RobustFilterConfig,
    RunError,
    RunTrace,
    load_config,
    make_stream,
    project,
    select_enrolled,
    uniform_alpha,
    weighted_aggregate,
)
from .federation import run_centralized_pg, run_experiment, run_pfl, run_pofl, run_profl

__version__ = "0.1.0"
