"""Normalized-innovation-squared statistics and chi-squared bounds.

For a consistent filter the squared innovation scaled by its variance
follows a chi-squared distribution with one degree of freedom, so
per-step values falling outside a two-sided quantile band count as
over-confidence (above the band) or under-confidence (below it).

The chi-squared CDF is evaluated through the regularized incomplete
gamma function (series expansion and Lentz continued fraction), and the
quantiles by bisection; no external special-function dependency.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_TAIL = 0.025

_MAX_GAMMA_ITER = 500
_GAMMA_EPS = 1e-15
_TINY = 1e-300

SUMMARY_COLUMNS = (
    "label",
    "dataset_tag",
    "runs",
    "avg_count_over",
    "avg_count_under",
    "avg_fraction_over",
    "avg_fraction_under",
    "avg_mean_nis",
)


@dataclass(frozen=True)
class NisSeries:
    """Per-step normalized innovation squared values."""

    values: np.ndarray
    dof: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError(f"values must be one-dimensional, got shape {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("normalized innovation squared values must be finite and nonnegative")
        if self.dof < 1:
            raise ValueError(f"degrees of freedom must be >= 1, got {self.dof}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_innovations(cls, innovations: Sequence[float], variances: Sequence[float]) -> "NisSeries":
        """Build a series from aligned innovation / innovation-variance arrays."""
        y = np.asarray(innovations, dtype=float)
        s = np.asarray(variances, dtype=float)
        if y.shape != s.shape:
            raise ValueError(f"misaligned innovations {y.shape} and variances {s.shape}")
        if np.any(s <= 0):
            raise ValueError("innovation variances must be positive")
        return cls(values=y * y / s)


@dataclass(frozen=True)
class NisReport:
    """Violation counts of one series against a two-sided chi-squared band."""

    mean_nis: float
    lower_bound: float
    upper_bound: float
    count_over: int
    count_under: int
    fraction_over: float
    fraction_under: float
    steps: int
    dataset_tag: str = "seen"


@dataclass(frozen=True)
class LabeledReport:
    """A per-run report tagged with its estimator configuration label."""

    label: str
    run_id: str
    report: NisReport


@dataclass(frozen=True)
class SummaryRow:
    """Per-(label, split) averages over runs."""

    label: str
    dataset_tag: str
    runs: int
    avg_count_over: float
    avg_count_under: float
    avg_fraction_over: float
    avg_fraction_under: float
    avg_mean_nis: float


def nis_step(y: float, s: float) -> float:
    """Normalized innovation squared of one step: y^2 / S."""
    if not s > 0:
        raise ValueError(f"innovation variance must be positive, got {s}")
    return y * y / s


def _lower_gamma_series(shape: float, x: float) -> float:
    """Regularized lower incomplete gamma via its power series (x < shape + 1)."""
    term = 1.0 / shape
    total = term
    denom = shape
    for _ in range(_MAX_GAMMA_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + shape * math.log(x) - math.lgamma(shape))

def _upper_gamma_fraction(shape: float, x: float) -> float:
    """Regularized upper incomplete gamma via Lentz's continued fraction (x >= shape + 1)."""
    b = x + 1.0 - shape
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_GAMMA_ITER + 1):
        an = -i * (i - shape)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + shape * math.log(x) - math.lgamma(shape))


def regularized_lower_gamma(shape: float, x: float) -> float:
    """P(shape, x), accurate to ~1e-14 for the small shapes used here."""
    if shape <= 0:
        raise ValueError(f"shape must be positive, got {shape}")
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if x < shape + 1.0:
        return _lower_gamma_series(shape, x)
    return 1.0 - _upper_gamma_fraction(shape, x)


def chi2_cdf(value: float, dof: int) -> float:
    """Chi-squared cumulative distribution function."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if value <= 0:
        return 0.0
    return regularized_lower_gamma(dof / 2.0, value / 2.0)


def _chi2_quantile(p: float, dof: int) -> float:
    """Inverse CDF by bracketed bisection, iterated to machine width."""
    lo = 0.0
    hi = max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
        if hi > 1e9:
            raise ArithmeticError(f"quantile bracket failed for p={p}, dof={dof}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_bounds(dof: int = 1, tail: float = DEFAULT_TAIL) -> tuple[float, float]:
    """Two-sided chi-squared band: quantiles at (tail, 1 - tail)."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if not 0.0 < tail < 0.5:
        raise ValueError(f"tail probability must be in (0, 0.5), got {tail}")
    return _chi2_quantile(tail, dof), _chi2_quantile(1.0 - tail, dof)


def nis_report(series: NisSeries, tail: float = DEFAULT_TAIL, dataset_tag: str = "seen") -> NisReport:
    """Count steps outside the chi-squared band and average the series."""
    if len(series) == 0:
        raise ValueError("cannot report on an empty series")
    lower, upper = chi2_bounds(series.dof, tail)
    count_over = int(np.count_nonzero(series.values > upper))
    count_under = int(np.count_nonzero(series.values < lower))
    steps = len(series)
    return NisReport(
        mean_nis=float(series.values.mean()),
        lower_bound=lower,
        upper_bound=upper,
        count_over=count_over,
        count_under=count_under,
        fraction_over=count_over / steps,
        fraction_under=count_under / steps,
        steps=steps,
        dataset_tag=dataset_tag,
    )


def compare_runs(entries: Sequence[LabeledReport]) -> list[SummaryRow]:
    """Average per-run violation counts per (label, split) group.

    Duplicate (label, run_id, split) entries are rejected; rows come back
    sorted by label then split.
    """
    if not entries:
        raise ValueError("nothing to compare")
    seen_keys = set()
    groups: dict[tuple[str, str], list[NisReport]] = {}
    for entry in entries:
        key = (entry.label, entry.run_id, entry.report.dataset_tag)
        if key in seen_keys:
            raise ValueError(f"duplicate report for {key}")
        seen_keys.add(key)
        groups.setdefault((entry.label, entry.report.dataset_tag), []).append(entry.report)

    rows = []
    for (label, tag), reports in sorted(groups.items()):
        n = len(reports)
        rows.append(
            SummaryRow(
                label=label,
                dataset_tag=tag,
                runs=n,
                avg_count_over=sum(r.count_over for r in reports) / n,
                avg_count_under=sum(r.count_under for r in reports) / n,
                avg_fraction_over=sum(r.fraction_over for r in reports) / n,
                avg_fraction_under=sum(r.fraction_under for r in reports) / n,
                avg_mean_nis=sum(r.mean_nis for r in reports) / n,
            )
        )
    return rows


def write_nis_report(report: NisReport, path: str | Path, label: str, n_components: int) -> None:
    """Export one report as JSON."""
    payload = {
        "label": label,
        "M": n_components,
        "dataset_tag": report.dataset_tag,
        "mean_nis": report.mean_nis,
        "lower": report.lower_bound,
        "upper": report.upper_bound,
        "count_over": report.count_over,
        "count_under": report.count_under,
        "fraction_over": report.fraction_over,
        "fraction_under": report.fraction_under,
        "steps": report.steps,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_summary(rows: Sequence[SummaryRow], path: str | Path) -> None:
    """Export the comparison table as CSV, one row per (label, split)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.label,
                    row.dataset_tag,
                    row.runs,
                    repr(row.avg_count_over),
                    repr(row.avg_count_under),
                    repr(row.avg_fraction_over),
                    repr(row.avg_fraction_under),
                    repr(row.avg_mean_nis),
                ]
            )
