"""Trajectory logs: data model, CSV ingest, and sliding-window slicing.

CSV schema (one file per run, header required):

    time_s, omega_radps, wheel_left_radps, wheel_right_radps

Comma separated, decimal point, UTF-8, rows strictly increasing in
``time_s``. The run id is the file stem. Consecutive rows ``i`` and
``i+1`` form one transition: the angular velocity and wheel speeds of
row ``i`` paired with the angular velocity of row ``i+1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

REQUIRED_COLUMNS = ("time_s", "omega_radps", "wheel_left_radps", "wheel_right_radps")

# Tolerance for the chain-consistency check between consecutive samples.
# Trajectories assembled from a single omega column chain exactly by
# construction; the tolerance covers hand-built sample sequences.
CHAIN_TOLERANCE = 1e-9

MIN_WINDOW = 3


class IngestError(ValueError):
    """A trajectory file violates the CSV schema."""


@dataclass(frozen=True)
class TrajectorySample:
    """One transition of angular velocity under a wheel-speed input pair.

    ``u_k`` is the (left, right) wheel angular velocity pair in rad/s.
    """

    x_k: float
    u_k: tuple[float, float]
    x_next: float

    def __post_init__(self):
        values = (self.x_k, self.u_k[0], self.u_k[1], self.x_next)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"trajectory sample has non-finite fields: {values}")


@dataclass(frozen=True)
class Trajectory:
    """An ordered run of transitions sampled at a fixed period ``dt``."""

    run_id: str
    dt: float
    samples: tuple[TrajectorySample, ...]

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "samples", tuple(self.samples))
        for i in range(len(self.samples) - 1):
            gap = abs(self.samples[i].x_next - self.samples[i + 1].x_k)
            if gap > CHAIN_TOLERANCE:
                raise ValueError(
                    f"run {self.run_id!r}: samples {i} and {i + 1} do not chain "
                    f"(x_next={self.samples[i].x_next!r} vs x_k={self.samples[i + 1].x_k!r})"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (x, u, x_next) as float arrays of shape (N,), (N, 2), (N,)."""
        return sample_arrays(self.samples)


@dataclass(frozen=True)
class Window:
    """A contiguous slice of a run, used to fit one local model."""

    run_id: str
    start_index: int
    samples: tuple[TrajectorySample, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return sample_arrays(self.samples)


def sample_arrays(samples: Sequence[TrajectorySample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a sample sequence into (x, u, x_next) float64 arrays."""
    x = np.array([s.x_k for s in samples], dtype=float)
    u = np.array([s.u_k for s in samples], dtype=float).reshape(len(samples), 2)
    x_next = np.array([s.x_next for s in samples], dtype=float)
    return x, u, x_next


def _parse_cell(raw: str, column: str, path: Path, row: int) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise IngestError(
            f"{path.name}, row {row}: column {column!r} is not numeric: {raw!r}"
        ) from None
    if not math.isfinite(value):
        raise IngestError(f"{path.name}, row {row}: column {column!r} is not finite: {raw!r}")
    return value


def load_trajectory(path: str | Path) -> Trajectory:
    """Load one run file into a :class:`Trajectory`.

    Raises :class:`IngestError` naming the file and row for schema
    violations: missing columns, non-numeric or non-finite cells, fewer
    than two rows, or timestamps that do not strictly increase.
    """
    path = Path(path)
    rows: list[tuple[float, float, float, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise IngestError(f"{path.name}: missing columns {missing} (header: {header})")
        for row_num, record in enumerate(reader, start=2):  # header is line 1
            rows.append(
                tuple(_parse_cell(record[c], c, path, row_num) for c in REQUIRED_COLUMNS)
            )
    if len(rows) < 2:
        raise IngestError(f"{path.name}: need at least 2 rows to form a transition, got {len(rows)}")

    times = [r[0] for r in rows]
    for i in range(1, len(times)):
        if not times[i] > times[i - 1]:
            raise IngestError(
                f"{path.name}, row {i + 2}: time_s must strictly increase "
                f"({times[i]!r} after {times[i - 1]!r})"
            )

    samples = tuple(
        TrajectorySample(x_k=rows[i][1], u_k=(rows[i][2], rows[i][3]), x_next=rows[i + 1][1])
        for i in range(len(rows) - 1)
    )
    return Trajectory(run_id=path.stem, dt=times[1] - times[0], samples=samples)


def load_trajectories(path: str | Path) -> list[Trajectory]:
    """Load every ``*.csv`` run file under a directory (or a single file).

    Results are ordered by filename.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise IngestError(f"no .csv run files found in {path}")
        return [load_trajectory(f) for f in files]
    if path.is_file():
        return [load_trajectory(path)]
    raise IngestError(f"no such file or directory: {path}")


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    """Write a run back to the CSV schema.

    Values are written via ``repr`` so re-loading reproduces the samples
    bit for bit. The final row repeats the last wheel-speed pair; it is
    never consumed on re-load.
    """
    path = Path(path)
    n = len(traj.samples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS)
        for i, s in enumerate(traj.samples):
            writer.writerow([repr(i * traj.dt), repr(s.x_k), repr(s.u_k[0]), repr(s.u_k[1])])
        last = traj.samples[-1]
        writer.writerow([repr(n * traj.dt), repr(last.x_next), repr(last.u_k[0]), repr(last.u_k[1])])


def sliding_windows(traj: Trajectory, window: int, stride: int = 1) -> list[Window]:
    """Slice a run into contiguous windows of ``window`` samples.

    With stride 1 this yields ``max(0, N - window + 1)`` windows. A window
    longer than the run yields an empty list; ``window`` below the
    identifiability minimum of 3 is a parameter error.
    """
    if window < MIN_WINDOW:
        raise ValueError(f"window must be >= {MIN_WINDOW}, got {window}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n = len(traj.samples)
    return [
        Window(run_id=traj.run_id, start_index=start, samples=traj.samples[start : start + window])
        for start in range(0, n - window + 1, stride)
    ]
