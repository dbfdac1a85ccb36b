"""Regime-switching synthetic trajectory generation.

Simulates the scalar angular-velocity dynamics under piecewise-constant
per-wheel excitation, switching the (a, b1, b2) triple at random dwell
times. Ground-truth regime labels are returned alongside the runs for
test oracles only; estimators never see them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sysid import DEFAULT_WINDOW
from .trajectory import Trajectory, TrajectorySample

LABEL_COLUMNS = ("time_s", "regime_index")


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``dwell`` is the mean number of steps between regime switches
    (exponential draws, or exact segments with ``fixed_dwell``).
    Excitation is an independent per-wheel square-ish pattern: levels
    drawn uniformly within ``input_amplitude`` bounds, held for random
    periods, which keeps the regression well excited in almost every
    window.
    """

    regimes: tuple[tuple[float, float, float], ...]
    dwell: float
    process_noise_std: float
    measurement_noise_std: float
    steps: int
    runs: int
    seed: int
    input_amplitude: float = 6.0
    input_period: tuple[int, int] = (5, 18)
    fixed_dwell: bool = False
    dt: float = 0.1
    x0: float = 0.0

    def __post_init__(self):
        if not self.regimes:
            raise ValueError("need at least one regime")
        for triple in self.regimes:
            if len(triple) != 3 or not all(math.isfinite(v) for v in triple):
                raise ValueError(f"regime must be a finite (a, b1, b2) triple, got {triple}")
            if abs(triple[0]) >= 1.05:
                raise ValueError(f"regime transition coefficient must satisfy |a| < 1.05, got {triple[0]}")
        if self.process_noise_std < 0 or self.measurement_noise_std < 0:
            raise ValueError("noise standard deviations must be nonnegative")
        if self.dwell < DEFAULT_WINDOW:
            raise ValueError(
                f"dwell must be >= {DEFAULT_WINDOW} steps so fitting windows fit inside regimes"
            )
        if self.steps < 1 or self.runs < 1:
            raise ValueError("steps and runs must be positive")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.input_amplitude < 0:
            raise ValueError("input amplitude bound must be nonnegative")
        lo, hi = self.input_period
        if lo < 1 or hi < lo:
            raise ValueError(f"input period range must satisfy 1 <= lo <= hi, got {self.input_period}")


def _wheel_profile(steps: int, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant wheel-speed levels held for random periods."""
    lo, hi = config.input_period
    levels = np.empty(steps)
    k = 0
    while k < steps:
        hold = int(rng.integers(lo, hi + 1))
        levels[k : k + hold] = rng.uniform(-config.input_amplitude, config.input_amplitude)
        k += hold
    return levels


def _regime_sequence(steps: int, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Regime index per transition, switching at (mean) dwell intervals."""
    n_regimes = len(config.regimes)
    labels = np.empty(steps, dtype=int)
    current = int(rng.integers(n_regimes))
    k = 0
    while k < steps:
        if config.fixed_dwell:
            hold = int(config.dwell)
        else:
            hold = max(1, int(round(rng.exponential(config.dwell))))
        labels[k : k + hold] = current
        k += hold
        if n_regimes > 1:
            candidates = [m for m in range(n_regimes) if m != current]
            current = candidates[int(rng.integers(len(candidates)))]
    return labels


def generate(config: SynthConfig) -> tuple[list[Trajectory], list[np.ndarray]]:
    """Simulate runs and return them with per-transition regime labels.

    The logged angular velocity is the measured one (true state plus
    measurement noise), matching what a real log would hold. Output is
    deterministic for a given config.
    """
    run_streams = np.random.SeedSequence(config.seed).spawn(config.runs)
    trajectories = []
    labels_per_run = []
    for run_index, stream in enumerate(run_streams):
        rng = np.random.default_rng(stream)
        labels = _regime_sequence(config.steps, config, rng)
        u_left = _wheel_profile(config.steps, config, rng)
        u_right = _wheel_profile(config.steps, config, rng)

        true_x = np.empty(config.steps + 1)
        true_x[0] = config.x0
        process = rng.normal(0.0, config.process_noise_std, size=config.steps)
        for k in range(config.steps):
            a, b1, b2 = config.regimes[labels[k]]
            true_x[k + 1] = a * true_x[k] + b1 * u_left[k] + b2 * u_right[k] + process[k]
        measured = true_x + rng.normal(0.0, config.measurement_noise_std, size=config.steps + 1)

        samples = tuple(
            TrajectorySample(
                x_k=float(measured[k]),
                u_k=(float(u_left[k]), float(u_right[k])),
                x_next=float(measured[k + 1]),
            )
            for k in range(config.steps)
        )
        trajectories.append(
            Trajectory(run_id=f"run{run_index:02d}", dt=config.dt, samples=samples)
        )
        labels_per_run.append(labels)
    return trajectories, labels_per_run


def save_labels(labels: np.ndarray, dt: float, path: str | Path) -> None:
    """Write the ground-truth sidecar: one row per transition."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_COLUMNS)
        for k, regime in enumerate(labels):
            writer.writerow([repr(k * dt), int(regime)])


def load_labels(path: str | Path) -> np.ndarray:
    """Read a sidecar written by :func:`save_labels`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return np.array([int(row["regime_index"]) for row in reader], dtype=int)
