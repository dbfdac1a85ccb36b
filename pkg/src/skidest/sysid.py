"""Least-squares identification of discrete-time angular-velocity models.

Fits the full-transition scalar model

    x[k+1] = a * x[k] + b1 * wheel_left[k] + b2 * wheel_right[k]

either globally over a whole dataset or locally over sliding windows,
producing a cloud of (a, b1, b2) model points for clustering.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .trajectory import Trajectory, Window, sliding_windows

DEFAULT_WINDOW = 25
DEFAULT_STRIDE = 1
DEFAULT_PROCESS_VAR = 1e-3
DEFAULT_MEASUREMENT_VAR = 1e-2

# Singular values below this fraction of the largest are treated as zero;
# such windows are degenerate (unexcited) and carry no input information.
RANK_TOLERANCE = 1e-10

MIN_TRANSITIONS = 3

MODEL_CLOUD_COLUMNS = ("run_id", "start_index", "a", "b1", "b2")


@dataclass(frozen=True)
class LinearModel:
    """Fitted scalar-state model plus its noise variances.

    ``a`` is the full state-transition coefficient (x[k+1] = a*x[k] + ...);
    ``q`` and ``r`` are the process and measurement noise variances.
    """

    a: float
    b1: float
    b2: float
    q: float
    r: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b1, self.b2)):
            raise ValueError(f"model coefficients must be finite: {(self.a, self.b1, self.b2)}")
        if not self.q > 0:
            raise ValueError(f"process variance q must be positive, got {self.q}")
        if not self.r > 0:
            raise ValueError(f"measurement variance r must be positive, got {self.r}")


@dataclass(frozen=True)
class LeastSquaresFit:
    """Minimum-norm solution of the 3-parameter regression.

    ``degenerate`` marks rank-deficient regressors (rank < 3), solved by
    the pseudo-inverse with small singular values zeroed.
    """

    a: float
    b1: float
    b2: float
    rank: int

    @property
    def degenerate(self) -> bool:
        return self.rank < 3

    @property
    def coefficients(self) -> tuple[float, float, float]:
        return (self.a, self.b1, self.b2)


@dataclass(frozen=True)
class ModelPoint:
    """One locally fitted model, a point (a, b1, b2) in model space."""

    a: float
    b1: float
    b2: float
    run_id: str
    start_index: int

    def coordinates(self) -> np.ndarray:
        return np.array([self.a, self.b1, self.b2], dtype=float)


@dataclass(frozen=True)
class ModelCloud:
    """All local models from one fit pass, plus the windowing used."""

    points: tuple[ModelPoint, ...]
    window: int
    stride: int
    degenerate_windows: int = 0

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        """Points as an (N, 3) array of (a, b1, b2) rows."""
        return np.array([[p.a, p.b1, p.b2] for p in self.points], dtype=float)


def fit_linear(x: np.ndarray, u: np.ndarray, x_next: np.ndarray) -> LeastSquaresFit:
    """Fit (a, b1, b2) by least squares over aligned transition arrays.

    Returns the minimum-norm solution; the residual is orthogonal to the
    regressor columns. Requires at least 3 transitions.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).reshape(x.size, 2)
    x_next = np.asarray(x_next, dtype=float).ravel()
    if x.size < MIN_TRANSITIONS:
        raise ValueError(f"need at least {MIN_TRANSITIONS} transitions, got {x.size}")
    if x_next.size != x.size:
        raise ValueError(f"misaligned sequences: {x.size} states vs {x_next.size} next-states")

    regressors = np.column_stack([x, u])
    theta, _, rank, _ = np.linalg.lstsq(regressors, x_next, rcond=RANK_TOLERANCE)
    return LeastSquaresFit(a=float(theta[0]), b1=float(theta[1]), b2=float(theta[2]), rank=int(rank))


def fit_window(window: Window) -> LeastSquaresFit:
    """Fit one local model over a window's transitions."""
    return fit_linear(*window.arrays())


def _pool_transitions(dataset: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, us, xns = [], [], []
    for traj in dataset:
        x, u, xn = traj.arrays()
        xs.append(x)
        us.append(u)
        xns.append(xn)
    return np.concatenate(xs), np.concatenate(us), np.concatenate(xns)


def fit_global(
    dataset: Sequence[Trajectory],
    q: float = DEFAULT_PROCESS_VAR,
    r: float = DEFAULT_MEASUREMENT_VAR,
) -> LinearModel:
    """Fit a single model over all transitions of the dataset pooled."""
    if not dataset:
        raise ValueError("cannot fit a global model to an empty dataset")
    x, u, x_next = _pool_transitions(dataset)
    fit = fit_linear(x, u, x_next)
    return LinearModel(a=fit.a, b1=fit.b1, b2=fit.b2, q=q, r=r)


def fit_local_models(
    dataset: Sequence[Trajectory],
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
) -> ModelCloud:
    """Fit one model per sliding window across the dataset.

    Runs are processed in run-id order and windows in start order, so the
    cloud is deterministic. Degenerate windows are excluded from the cloud
    and only counted.
    """
    if not dataset:
        raise ValueError("cannot fit local models to an empty dataset")
    points: list[ModelPoint] = []
    degenerate = 0
    for traj in sorted(dataset, key=lambda t: t.run_id):
        for win in sliding_windows(traj, window, stride):
            fit = fit_window(win)
            if fit.degenerate:
                degenerate += 1
                continue
            points.append(
                ModelPoint(a=fit.a, b1=fit.b1, b2=fit.b2, run_id=win.run_id, start_index=win.start_index)
            )
    if not points:
        raise ValueError(
            f"no usable windows: all {degenerate} windows were degenerate (unexcited data)"
        )
    return ModelCloud(points=tuple(points), window=window, stride=stride, degenerate_windows=degenerate)


def write_model_cloud(cloud: ModelCloud, path: str | Path) -> None:
    """Export a cloud as CSV with columns run_id, start_index, a, b1, b2."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MODEL_CLOUD_COLUMNS)
        for p in cloud.points:
            writer.writerow([p.run_id, p.start_index, repr(p.a), repr(p.b1), repr(p.b2)])


def read_model_cloud(path: str | Path, window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE) -> ModelCloud:
    """Load a cloud exported by :func:`write_model_cloud`."""
    path = Path(path)
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MODEL_CLOUD_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path.name}: missing columns {missing}")
        for record in reader:
            points.append(
                ModelPoint(
                    a=float(record["a"]),
                    b1=float(record["b1"]),
                    b2=float(record["b2"]),
                    run_id=record["run_id"],
                    start_index=int(record["start_index"]),
                )
            )
    if not points:
        raise ValueError(f"{path.name}: empty model cloud")
    return ModelCloud(points=tuple(points), window=window, stride=stride)


def write_global_model(model: LinearModel, path: str | Path) -> None:
    """Export a model as a JSON object {a, b1, b2, q, r}."""
    payload = {"a": model.a, "b1": model.b1, "b2": model.b2, "q": model.q, "r": model.r}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_global_model(path: str | Path) -> LinearModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return LinearModel(a=payload["a"], b1=payload["b1"], b2=payload["b2"], q=payload["q"], r=payload["r"])
