"""Interacting multiple-model estimator over a bank of scalar filters.

Each step mixes the per-model states through the transition matrix,
runs one Kalman predict/update per model against the shared measurement,
re-weights the models by their innovation likelihoods, and combines the
posteriors into one estimate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kalman import DEFAULT_INITIAL_VARIANCE, FilterState, UpdateOutcome, kf_predict, kf_update
from .sysid import LinearModel
from .trajectory import Trajectory

DEFAULT_STAY_PROB = 0.95
LIKELIHOOD_FLOOR = 1e-300
WEIGHT_FLOOR = 1e-12  # keeps one outlier from killing a model permanently
MIX_NORMALIZER_FLOOR = 1e-300

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImmBank:
    """Per-model filter states, model probabilities, and switch matrix."""

    models: tuple[LinearModel, ...]
    states: tuple[FilterState, ...]
    weights: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        m = len(self.models)
        weights = np.asarray(self.weights, dtype=float)
        transition = np.asarray(self.transition, dtype=float)
        if len(self.states) != m or weights.shape != (m,) or transition.shape != (m, m):
            raise ValueError(
                f"bank size mismatch: {m} models, {len(self.states)} states, "
                f"weights {weights.shape}, transition {transition.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"model weights must be a simplex vector, got sum {weights.sum()!r}")
        if np.any(transition < 0) or np.any(np.abs(transition.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition matrix must be row-stochastic with nonnegative entries")
        weights.setflags(write=False)
        transition.setflags(write=False)
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "transition", transition)

    @property
    def n_models(self) -> int:
        return len(self.models)


@dataclass(frozen=True)
class ImmStepOutput:
    """Everything one step produces.

    ``innovation_mix`` is the probability-weighted (y, S) moment match
    across models; ``innovation_dominant`` is the (y, S) of the model
    with the largest updated weight. ``likelihoods_floored`` flags steps
    where every model likelihood underflowed and the weights were
    carried over unchanged.
    """

    combined: FilterState
    weights: np.ndarray
    per_model: tuple[UpdateOutcome, ...]
    innovation_mix: tuple[float, float]
    innovation_dominant: tuple[float, float]
    likelihoods_floored: bool = False


def sticky_transition(n_models: int, stay_prob: float = DEFAULT_STAY_PROB) -> np.ndarray:
    """Diagonal-dominant switch matrix: stay with ``stay_prob``, split the rest."""
    if n_models < 1:
        raise ValueError("need at least one model")
    if not 0.0 < stay_prob <= 1.0:
        raise ValueError(f"stay probability must be in (0, 1], got {stay_prob}")
    if n_models == 1:
        return np.array([[1.0]])
    off = (1.0 - stay_prob) / (n_models - 1)
    tr = np.full((n_models, n_models), off)
    np.fill_diagonal(tr, stay_prob)
    return tr


def init_bank(
    models: Sequence[LinearModel],
    x0: float,
    p0: float = DEFAULT_INITIAL_VARIANCE,
    transition: np.ndarray | None = None,
    stay_prob: float = DEFAULT_STAY_PROB,
) -> ImmBank:
    """Bank with equal model weights and a common initial filter state."""
    models = tuple(models)
    if not models:
        raise ValueError("need at least one model")
    if transition is None:
        transition = sticky_transition(len(models), stay_prob)
    states = tuple(FilterState(x=x0, p=p0) for _ in models)
    weights = np.full(len(models), 1.0 / len(models))
    return ImmBank(models=models, states=states, weights=weights, transition=transition)


def imm_mix(bank: ImmBank) -> list[FilterState]:
    """Mix the per-model states for the next prediction round.

    For each target model j the sources are weighted by
    w_i * Tr[i, j] normalized over i; the mixed variance picks up the
    spread of the source means. An underflowing normalizer falls back to
    uniform mixing for that target.
    """
    x = np.array([s.x for s in bank.states])
    p = np.array([s.p for s in bank.states])
    w = bank.weights
    mixed = []
    for j in range(bank.n_models):
        mass = w * bank.transition[:, j]
        norm = mass.sum()
        if norm < MIX_NORMALIZER_FLOOR:
            log.warning("mixing normalizer underflow for model %d; using uniform fallback", j)
            mix_probs = np.full(bank.n_models, 1.0 / bank.n_models)
        else:
            mix_probs = mass / norm
        x_mix = float(mix_probs @ x)
        p_mix = float(mix_probs @ (p + (x - x_mix) ** 2))
        mixed.append(FilterState(x=x_mix, p=p_mix))
    return mixed


def model_likelihood(outcome: UpdateOutcome) -> float:
    """Gaussian density of the innovation, floored against total underflow."""
    y = outcome.innovation
    s = outcome.innovation_var
    exponent = -0.5 * y * y / s
    density = math.exp(exponent) / math.sqrt(2.0 * math.pi * s) if exponent > -745.0 else 0.0
    return max(density, LIKELIHOOD_FLOOR)


def imm_step(bank: ImmBank, u: Sequence[float], z: float) -> tuple[ImmBank, ImmStepOutput]:
    """Advance the bank one measurement: mix, filter per model, re-weight, combine."""
    if not math.isfinite(z):
        raise ValueError(f"measurement must be finite, got {z}")
    mixed = imm_mix(bank)
    outcomes = []
    for model, state in zip(bank.models, mixed):
        prior = kf_predict(state, model, u)
        outcomes.append(kf_update(prior, z, model.r))

    likelihoods = np.array([model_likelihood(o) for o in outcomes])
    floored = bool(np.all(likelihoods <= LIKELIHOOD_FLOOR))
    if floored:
        weights = bank.weights.copy()
        log.debug("all model likelihoods underflowed; carrying weights over unchanged")
    else:
        weights = likelihoods * bank.weights
        weights /= weights.sum()
        weights = np.maximum(weights, WEIGHT_FLOOR)
        weights /= weights.sum()

    xs = np.array([o.state.x for o in outcomes])
    ps = np.array([o.state.p for o in outcomes])
    x_hat = float(weights @ xs)
    p_hat = float(weights @ (ps + (xs - x_hat) ** 2))

    ys = np.array([o.innovation for o in outcomes])
    ss = np.array([o.innovation_var for o in outcomes])
    y_mix = float(weights @ ys)
    s_mix = float(weights @ (ss + (ys - y_mix) ** 2))
    dominant = int(np.argmax(weights))

    new_bank = ImmBank(
        models=bank.models,
        states=tuple(o.state for o in outcomes),
        weights=weights,
        transition=bank.transition,
    )
    output = ImmStepOutput(
        combined=FilterState(x=x_hat, p=p_hat),
        weights=weights,
        per_model=tuple(outcomes),
        innovation_mix=(y_mix, s_mix),
        innovation_dominant=(float(ys[dominant]), float(ss[dominant])),
        likelihoods_floored=floored,
    )
    return new_bank, output


def run_imm(
    models: Sequence[LinearModel],
    trajectory: Trajectory,
    transition: np.ndarray | None = None,
    stay_prob: float = DEFAULT_STAY_PROB,
    x0: float | None = None,
    p0: float = DEFAULT_INITIAL_VARIANCE,
) -> list[ImmStepOutput]:
    """Fold the bank over a whole trajectory, one step per sample."""
    if not trajectory.samples:
        raise ValueError(f"run {trajectory.run_id!r} has no samples")
    if x0 is None:
        x0 = trajectory.samples[0].x_k
    bank = init_bank(models, x0=x0, p0=p0, transition=transition, stay_prob=stay_prob)
    outputs = []
    for sample in trajectory.samples:
        bank, output = imm_step(bank, sample.u_k, sample.x_next)
        outputs.append(output)
    return outputs
