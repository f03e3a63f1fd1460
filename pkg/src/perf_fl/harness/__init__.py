"""Experiment presets, multi-seed reports, CSV ingestion and the CLI."""
from .ingest import ingest_csv, shard_rows
from .presets import PRESETS, ExperimentPreset, get_preset
from .report import (
    SummaryReport,
    SummaryRow,
    classify_accuracy,
    convergence_iteration,
    fleet_accuracy,
    recompute_summary_from_traces,
    run_preset,
)

__all__ = [
    "ingest_csv",
    "shard_rows",
    "PRESETS",
    "ExperimentPreset",
    "get_preset",
    "SummaryReport",
    "SummaryRow",
    "classify_accuracy",
    "convergence_iteration",
    "fleet_accuracy",
    "recompute_summary_from_traces",
    "run_preset",
]
