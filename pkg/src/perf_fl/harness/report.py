"""Preset execution, multi-seed statistics and trace/summary export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ConfigurationError, RunTrace, make_stream
from ..environments import ContaminatedClient
from ..federation import run_experiment
from .presets import ExperimentPreset, get_preset


def classify_accuracy(theta: np.ndarray, env, n_eval: int,
                      rng: np.random.Generator) -> float:
    """Accuracy of the thresholded sigmoid score on fresh clean draws from D(theta)."""
    if not hasattr(env, "predict"):
        raise ConfigurationError("accuracy evaluation needs a classification environment")
    batch = env.sample(theta, n_eval, rng)
    x, y = batch.z[:, : env.dim], batch.z[:, env.dim]
    pred = env.predict(x, theta)
    return float((pred == y.astype(np.int64)).mean())


def fleet_accuracy(theta: np.ndarray, clients: list[ContaminatedClient],
                   n_eval: int, rng: np.random.Generator) -> float:
    alphas = np.asarray([c.alpha for c in clients])
    alphas = alphas / alphas.sum()
    return float(sum(a * classify_accuracy(theta, c.env, n_eval, rng)
                     for a, c in zip(alphas, clients)))


@dataclass
class SummaryRow:
    preset: str
    sweep_param: str
    sweep_value: str
    algorithm: str
    num_seeds: int
    mean_final_loss: float
    std_final_loss: float
    mean_accuracy: float | None
    std_accuracy: float | None
    mean_convergence_iter: float
    total_samples: int


@dataclass
class SummaryReport:
    """Per (sweep value, algorithm) statistics over the configured seeds."""

    preset: str
    rows: list[SummaryRow] = field(default_factory=list)

    def row(self, sweep_value, algorithm: str) -> SummaryRow:
        key = _fmt_value(sweep_value)
        for row in self.rows:
            if row.sweep_value == key and row.algorithm == algorithm:
                return row
        raise KeyError(f"no summary row for ({sweep_value!r}, {algorithm!r})")

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fields = ["preset", "sweep_param", "sweep_value", "algorithm", "num_seeds",
                  "mean_final_loss", "std_final_loss", "mean_accuracy",
                  "std_accuracy", "mean_convergence_iter", "total_samples"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for row in self.rows:
                writer.writerow([getattr(row, f) for f in fields])


def convergence_iteration(trace: RunTrace, tol: float = 0.01) -> int:
    """First iteration whose loss is within tol (relative) of the final loss."""
    final = trace.final_loss
    scale = max(abs(final), 1e-12)
    losses = trace.loss_array()
    hits = np.flatnonzero(np.abs(losses - final) <= tol * scale)
    return int(hits[0]) if hits.size else len(losses) - 1


def _fmt_value(value) -> str:
    return str(value)


@dataclass
class CellResult:
    sweep_value: object
    algorithm: str
    seed: int
    trace: RunTrace
    accuracy: float | None


def run_preset(
    name: str,
    overrides: dict | None = None,
    out_dir: str | Path | None = None,
    seeds: tuple[int, ...] | None = None,
    algorithms: tuple[str, ...] | None = None,
    sweep_values: tuple | None = None,
    accuracy_eval_n: int = 20000,
) -> tuple[SummaryReport, list[CellResult]]:
    """Run every (sweep value x algorithm x seed) cell of a preset.

    Writes one trace CSV per cell plus a summary CSV when out_dir is given,
    and returns the in-memory report alongside the raw per-cell results.
    """
    preset = get_preset(name)
    seeds = tuple(seeds) if seeds is not None else preset.seeds
    algorithms = tuple(algorithms) if algorithms is not None else preset.algorithms
    sweep_values = tuple(sweep_values) if sweep_values is not None else preset.sweep_values

    results: list[CellResult] = []
    report = SummaryReport(preset=name)
    out_path = Path(out_dir) / name if out_dir is not None else None

    for value in sweep_values:
        for algorithm in algorithms:
            losses, accs, convs, totals = [], [], [], []
            for seed in seeds:
                cfg, clients = preset.cell(value, algorithm, seed, overrides)
                trace = run_experiment(cfg, clients)
                acc = None
                if preset.classification:
                    acc = fleet_accuracy(trace.final_theta, clients, accuracy_eval_n,
                                         make_stream(seed, "accuracy"))
                results.append(CellResult(value, algorithm, seed, trace, acc))
                losses.append(trace.final_loss)
                convs.append(convergence_iteration(trace))
                totals.append(trace.total_samples())
                if acc is not None:
                    accs.append(acc)
                if out_path is not None:
                    cell = f"{preset.sweep_param}={_fmt_value(value)}__{algorithm}__seed{seed}"
                    trace.to_csv(out_path / cell / "trace.csv")
            losses_arr = np.asarray(losses)
            report.rows.append(SummaryRow(
                preset=name,
                sweep_param=preset.sweep_param,
                sweep_value=_fmt_value(value),
                algorithm=algorithm,
                num_seeds=len(seeds),
                mean_final_loss=float(losses_arr.mean()),
                std_final_loss=float(losses_arr.std(ddof=1)) if len(seeds) > 1 else 0.0,
                mean_accuracy=float(np.mean(accs)) if accs else None,
                std_accuracy=(float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0)
                if accs else None,
                mean_convergence_iter=float(np.mean(convs)),
                total_samples=int(np.sum(totals)),
            ))
    if out_path is not None:
        report.to_csv(out_path / "summary.csv")
    return report, results


def recompute_summary_from_traces(out_dir: str | Path, name: str) -> dict[tuple[str, str], float]:
    """Re-read the written trace CSVs and recompute mean final losses per cell
    group; used to check round-trip integrity of the export."""
    base = Path(out_dir) / name
    groups: dict[tuple[str, str], list[float]] = {}
    for cell_dir in sorted(base.iterdir()):
        if not cell_dir.is_dir():
            continue
        sweep_part, algorithm, _seed = cell_dir.name.split("__")
        value = sweep_part.split("=", 1)[1]
        trace = RunTrace.from_csv(cell_dir / "trace.csv")
        groups.setdefault((value, algorithm), []).append(trace.final_loss)
    return {key: float(np.mean(vals)) for key, vals in groups.items()}
