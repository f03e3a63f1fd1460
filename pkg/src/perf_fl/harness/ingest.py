"""CSV ingestion for classification datasets.

Expected schema: a header row, all-numeric columns, final column a binary
label.  Features are standardized once at load; malformed rows are rejected
with their line number.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..core import ConfigurationError


def ingest_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Load (standardized features, binary labels) from a CSV file."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset file not found: {path}")
    rows: list[list[float]] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ConfigurationError(f"{path}: need at least one feature column and a label")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ConfigurationError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise ConfigurationError(f"{path}: row {lineno} has a non-numeric field") from None
            if not all(np.isfinite(values)):
                raise ConfigurationError(f"{path}: row {lineno} has a missing/non-finite value")
            rows.append(values)
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    features, labels = data[:, :-1], data[:, -1]
    if not set(np.unique(labels)) <= {0.0, 1.0}:
        raise ConfigurationError(f"{path}: final column must be a binary (0/1) label")
    std = features.std(axis=0)
    std[std == 0] = 1.0
    features = (features - features.mean(axis=0)) / std
    return features, labels


def shard_rows(num_rows: int, num_shards: int) -> list[np.ndarray]:
    """Split row indices evenly by position; shard sizes differ by at most one."""
    if num_shards < 1 or num_rows < num_shards:
        raise ConfigurationError("need at least one row per shard")
    return [np.asarray(part) for part in np.array_split(np.arange(num_rows), num_shards)]
