"""Scalar-state discrete-time Kalman filter.

Used standalone as the single-model baseline and as the per-model core
of the interacting multiple-model bank. The measurement is the state
itself (unit measurement matrix, no feedthrough), so all arithmetic is
scalar; the standard covariance update with a positivity assertion is
sufficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .sysid import LinearModel
from .trajectory import Trajectory

DEFAULT_INITIAL_VARIANCE = 1.0


@dataclass(frozen=True)
class FilterState:
    """State estimate and its variance."""

    x: float
    p: float

    def __post_init__(self):
        if not math.isfinite(self.x):
            raise ValueError(f"state estimate must be finite, got {self.x}")
        if not self.p > 0:
            raise ValueError(f"estimate variance must be positive, got {self.p}")


@dataclass(frozen=True)
class UpdateOutcome:
    """Posterior state plus the innovation that produced it."""

    state: FilterState
    innovation: float
    innovation_var: float

    def __post_init__(self):
        if not self.innovation_var > 0:
            raise ValueError(f"innovation variance must be positive, got {self.innovation_var}")


def kf_predict(state: FilterState, model: LinearModel, u: Sequence[float]) -> FilterState:
    """Propagate one step: x = a*x + b1*u_l + b2*u_r, p = a^2*p + q."""
    x = model.a * state.x + model.b1 * u[0] + model.b2 * u[1]
    p = model.a * model.a * state.p + model.q
    return FilterState(x=x, p=p)


def kf_update(prior: FilterState, z: float, r: float) -> UpdateOutcome:
    """Fuse a measurement into the prior.

    innovation y = z - x, S = p + r, gain K = p / S; the posterior
    variance (1 - K) * p is strictly below the prior variance for any
    finite r.
    """
    if not r > 0:
        raise ValueError(f"measurement variance must be positive, got {r}")
    y = z - prior.x
    s = prior.p + r
    k = prior.p / s
    x = prior.x + k * y
    p = (1.0 - k) * prior.p
    assert p > 0, f"posterior variance collapsed to {p}"
    return UpdateOutcome(state=FilterState(x=x, p=p), innovation=y, innovation_var=s)


def run_kf(
    model: LinearModel,
    trajectory: Trajectory,
    x0: float | None = None,
    p0: float = DEFAULT_INITIAL_VARIANCE,
) -> list[UpdateOutcome]:
    """Run the filter over a whole trajectory.

    Each sample contributes one predict (with its wheel-speed pair) and
    one update (with its next measured angular velocity). The state
    starts at the first logged measurement unless ``x0`` is given.
    """
    if not trajectory.samples:
        raise ValueError(f"run {trajectory.run_id!r} has no samples")
    if x0 is None:
        x0 = trajectory.samples[0].x_k
    state = FilterState(x=x0, p=p0)
    outcomes = []
    for sample in trajectory.samples:
        prior = kf_predict(state, model, sample.u_k)
        outcome = kf_update(prior, sample.x_next, model.r)
        outcomes.append(outcome)
        state = outcome.state
    return outcomes
