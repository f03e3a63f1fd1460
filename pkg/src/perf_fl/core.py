"""Shared domain types: parameter box, experiment config, RNG streams, run traces.

Everything here is deterministic given the experiment seed.  Random number
streams are derived per (seed, purpose, id) so that clients can be stepped in
any order (or in parallel) and still reproduce the sequential result bit for
bit.
"""
from __future__ import annotations

import csv
import math
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml

ALGORITHMS = ("ProFL", "PoFL", "PFL", "CentralizedPG")


class ConfigurationError(ValueError):
    """Raised for invalid experiment configuration or mismatched dimensions."""


class RunError(RuntimeError):
    """Raised when a training run hits an unrecoverable state."""


class NumericError(RuntimeError):
    """Raised when a dense linear-algebra routine fails to converge."""


class ConfigWarning(UserWarning):
    """Non-fatal configuration smells (e.g. estimation window too small)."""


# ---------------------------------------------------------------------------
# deterministic RNG streams
# ---------------------------------------------------------------------------

def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def make_stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for (seed, *key); same key -> same sequence."""
    entropy = [int(seed)] + [_key_part(p) for p in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def check_model_vector(theta: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Validate a model point: 1-D, finite, optionally of a fixed length."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ConfigurationError(f"model vector must be 1-D, got shape {theta.shape}")
    if dim is not None and theta.size != dim:
        raise ConfigurationError(f"model vector has length {theta.size}, expected {dim}")
    if not np.all(np.isfinite(theta)):
        raise ConfigurationError("model vector has non-finite entries")
    return theta


# ---------------------------------------------------------------------------
# parameter box and elementary server ops
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterBox:
    """Compact box constraint for the model: lower[j] <= theta[j] <= upper[j]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ConfigurationError("box bounds must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigurationError("box bounds must be finite (compactness)")
        if np.any(lower > upper):
            raise ConfigurationError("box has lower[j] > upper[j]")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, theta: np.ndarray, atol: float = 0.0) -> bool:
        return bool(np.all(theta >= self.lower - atol) and np.all(theta <= self.upper + atol))


def project(theta: np.ndarray, box: ParameterBox) -> np.ndarray:
    """Componentwise clamp of theta into the box (identity for interior points)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != box.lower.shape:
        raise ConfigurationError(
            f"projection dimension mismatch: theta has {theta.shape}, box has {box.lower.shape}"
        )
    return np.clip(theta, box.lower, box.upper)


def weighted_aggregate(models: Iterable[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Weighted average of local models, renormalizing weights over the set."""
    models = [np.asarray(m, dtype=np.float64) for m in models]
    weights = np.asarray(weights, dtype=np.float64)
    if len(models) == 0:
        raise RunError("aggregation over an empty enrolled set")
    if weights.size != len(models):
        raise ConfigurationError("one weight per model required")
    if np.any(weights < 0):
        raise ConfigurationError("aggregation weights must be nonnegative")
    total = weights.sum()
    if total <= 0:
        raise RunError("aggregation weights sum to zero")
    stacked = np.stack(models, axis=0)
    return (weights / total) @ stacked


def select_enrolled(t: int, num_clients: int, fraction: float, seed: int) -> np.ndarray:
    """Uniform subset of ceil(fraction * N) client ids, deterministic in (seed, t)."""
    size = math.ceil(fraction * num_clients)
    size = max(1, min(size, num_clients))
    if size == num_clients:
        return np.arange(num_clients)
    rng = make_stream(seed, "enroll", t)
    ids = rng.choice(num_clients, size=size, replace=False)
    ids.sort()
    return ids


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedSampleSize:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("fixed sample size must be >= 1")


@dataclass(frozen=True)
class AdaptiveSampleSize:
    """Adaptive per-client sample size driven by a target error bound Phi."""

    Phi: float
    n_min: int
    n_max: int
    phi: float = 0.05  # failure probability in the concentration bound

    def __post_init__(self):
        if self.Phi <= 0:
            raise ConfigurationError("error bound Phi must be positive")
        if not (0 < self.phi < 1):
            raise ConfigurationError("phi must lie in (0, 1)")
        if not (1 <= self.n_min <= self.n_max):
            raise ConfigurationError("need 1 <= n_min <= n_max")


@dataclass(frozen=True)
class RobustFilterConfig:
    """Thresholds of the iterative SVD outlier filter."""

    C: float  # relative histogram-frequency cutoff
    J: float  # relative mean-gradient change stopping threshold
    B: int = 20  # histogram segments

    def __post_init__(self):
        if not (0 < self.C < 1) or not (0 < self.J < 1):
            raise ConfigurationError("C and J must lie in (0, 1)")
        if self.B < 2:
            raise ConfigurationError("need at least 2 histogram segments")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full specification of one training run.

    alpha holds the client weights (sums to 1); projection is the compact
    parameter box; robust_filter of None disables outlier removal (only
    sensible for contamination-free runs); server_clusters maps client id to
    a cluster id for server-side Jacobian estimation.
    """

    eta: float
    H: int
    R: int
    T: int
    num_clients: int
    enrollment_fraction: float
    alpha: np.ndarray
    seed: int
    algorithm: str
    sample_size: FixedSampleSize | AdaptiveSampleSize
    projection: ParameterBox
    robust_filter: RobustFilterConfig | None = None
    server_clusters: dict[int, int] | None = None
    ridge: float = 0.0
    theta0: np.ndarray | None = None
    eval_samples: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=np.float64))
        for name in ("eta",):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("H", "R", "T", "num_clients", "eval_samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if not (0 < self.enrollment_fraction <= 1):
            raise ConfigurationError("enrollment_fraction must lie in (0, 1]")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.alpha.shape != (self.num_clients,):
            raise ConfigurationError("alpha must have one weight per client")
        if np.any(self.alpha < 0):
            raise ConfigurationError("alpha weights must be nonnegative")
        if abs(self.alpha.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"alpha must sum to 1 (got {self.alpha.sum()!r})")
        if self.ridge < 0:
            raise ConfigurationError("ridge must be >= 0")
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", check_model_vector(self.theta0, self.dim))
        if self.server_clusters is not None:
            bad = [c for c in self.server_clusters if not (0 <= c < self.num_clients)]
            if bad:
                raise ConfigurationError(f"server_clusters has unknown client ids {bad}")
        if self.H <= self.dim:
            warnings.warn(
                f"estimation window H={self.H} <= model dimension d={self.dim}; "
                "the finite-difference Jacobian may be rank deficient",
                ConfigWarning,
                stacklevel=2,
            )

    @property
    def dim(self) -> int:
        return self.projection.dim

    def initial_theta(self) -> np.ndarray:
        if self.theta0 is not None:
            return self.theta0.copy()
        return np.zeros(self.dim)


def uniform_alpha(num_clients: int) -> np.ndarray:
    return np.full(num_clients, 1.0 / num_clients)


_CONFIG_KEYS = {
    "eta", "H", "R", "T", "num_clients", "enrollment_fraction", "alpha", "seed",
    "algorithm", "sample_size", "robust_filter", "server_clusters", "projection",
    "ridge", "theta0", "eval_samples",
}


def load_config(path: str | Path) -> ExperimentConfig:
    """Load an ExperimentConfig from a YAML key/value file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must contain a mapping at top level")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    missing = {"eta", "H", "R", "T", "num_clients", "seed", "algorithm",
               "sample_size", "projection"} - set(raw)
    if missing:
        raise ConfigurationError(f"missing config keys: {sorted(missing)}")

    proj = raw["projection"]
    if not isinstance(proj, dict) or set(proj) != {"lower", "upper"}:
        raise ConfigurationError("projection must be a mapping with 'lower' and 'upper'")
    box = ParameterBox(np.asarray(proj["lower"], float), np.asarray(proj["upper"], float))

    n_clients = int(raw["num_clients"])
    alpha = raw.get("alpha", "uniform")
    if isinstance(alpha, str):
        if alpha != "uniform":
            raise ConfigurationError("alpha must be a list of weights or 'uniform'")
        alpha = uniform_alpha(n_clients)
    else:
        alpha = np.asarray(alpha, dtype=np.float64)

    ss = raw["sample_size"]
    if not isinstance(ss, dict) or "mode" not in ss:
        raise ConfigurationError("sample_size must be a mapping with a 'mode' key")
    if ss["mode"] == "fixed":
        sample_size: FixedSampleSize | AdaptiveSampleSize = FixedSampleSize(int(ss["n"]))
    elif ss["mode"] == "adaptive":
        sample_size = AdaptiveSampleSize(
            Phi=float(ss["Phi"]), n_min=int(ss["n_min"]), n_max=int(ss["n_max"]),
            phi=float(ss.get("phi", 0.05)),
        )
    else:
        raise ConfigurationError(f"unknown sample_size mode {ss['mode']!r}")

    rf = raw.get("robust_filter")
    robust = None
    if rf is not None:
        robust = RobustFilterConfig(C=float(rf["C"]), J=float(rf["J"]), B=int(rf.get("B", 20)))

    clusters = raw.get("server_clusters")
    if clusters is not None:
        clusters = {int(k): int(v) for k, v in clusters.items()}

    theta0 = raw.get("theta0")
    if theta0 is not None:
        theta0 = np.asarray(theta0, dtype=np.float64)

    return ExperimentConfig(
        eta=float(raw["eta"]), H=int(raw["H"]), R=int(raw["R"]), T=int(raw["T"]),
        num_clients=n_clients, enrollment_fraction=float(raw.get("enrollment_fraction", 1.0)),
        alpha=alpha, seed=int(raw["seed"]), algorithm=str(raw["algorithm"]),
        sample_size=sample_size, robust_filter=robust, server_clusters=clusters,
        projection=box, ridge=float(raw.get("ridge", 0.0)), theta0=theta0,
        eval_samples=int(raw.get("eval_samples", 2000)),
    )


# ---------------------------------------------------------------------------
# run traces
# ---------------------------------------------------------------------------

@dataclass
class RunTrace:
    """Per-iteration record of a run: exactly T+1 rows including t=0.

    Column semantics: row t holds the global model and its performative loss
    at time t; enrolled / removed_total / n_total describe the client activity
    of iteration t-1 (zeros in row 0).  Wall time is cumulative seconds and is
    deliberately excluded from the CSV so that identical runs produce
    byte-identical files.
    """

    dim: int
    t: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    theta: list[np.ndarray] = field(default_factory=list)
    enrolled: list[int] = field(default_factory=list)
    removed_total: list[int] = field(default_factory=list)
    n_total: list[int] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    n_by_client: list[np.ndarray] = field(default_factory=list)

    def append(self, t: int, theta: np.ndarray, loss: float, enrolled: int,
               removed_total: int, n_total: int, wall_time: float,
               n_by_client: np.ndarray | None = None) -> None:
        if not np.isfinite(loss):
            raise RunError(f"non-finite performative loss at iteration {t}")
        self.t.append(int(t))
        self.theta.append(np.asarray(theta, dtype=np.float64).copy())
        self.loss.append(float(loss))
        self.enrolled.append(int(enrolled))
        self.removed_total.append(int(removed_total))
        self.n_total.append(int(n_total))
        self.wall_time.append(float(wall_time))
        if n_by_client is not None:
            self.n_by_client.append(np.asarray(n_by_client, dtype=np.int64).copy())

    def __len__(self) -> int:
        return len(self.t)

    @property
    def final_theta(self) -> np.ndarray:
        return self.theta[-1]

    @property
    def final_loss(self) -> float:
        return self.loss[-1]

    def theta_matrix(self) -> np.ndarray:
        return np.stack(self.theta, axis=0)

    def loss_array(self) -> np.ndarray:
        return np.asarray(self.loss, dtype=np.float64)

    def total_samples(self) -> int:
        return int(sum(self.n_total))

    def header(self) -> list[str]:
        return (["t", "loss"] + [f"theta_{j}" for j in range(self.dim)]
                + ["enrolled", "removed_total", "n_total"])

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for k in range(len(self.t)):
                row = [self.t[k], repr(self.loss[k])]
                row += [repr(float(v)) for v in self.theta[k]]
                row += [self.enrolled[k], self.removed_total[k], self.n_total[k]]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path) -> "RunTrace":
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            theta_cols = [h for h in header if h.startswith("theta_")]
            dim = len(theta_cols)
            expected = (["t", "loss"] + [f"theta_{j}" for j in range(dim)]
                        + ["enrolled", "removed_total", "n_total"])
            if header != expected:
                raise ConfigurationError(f"unexpected trace header in {path}")
            trace = cls(dim=dim)
            for row in reader:
                t = int(row[0])
                loss = float(row[1])
                theta = np.asarray([float(v) for v in row[2:2 + dim]])
                enrolled, removed, n_total = (int(v) for v in row[2 + dim:5 + dim])
                trace.append(t, theta, loss, enrolled, removed, n_total, 0.0)
        return trace
