"""Diagonal-covariance Gaussian mixture fitting over the model cloud.

Expectation-maximization on the 3-dimensional (a, b1, b2) points, with
log-space responsibilities, a per-axis variance floor, and an
empty-component rescue. Component means double as representative linear
models for the filter bank.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .sysid import LinearModel, ModelCloud

VARIANCE_FLOOR = 1e-8
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500
RESCUE_THRESHOLD = 1e-6  # responsibility mass below which a component is re-seeded

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmParams:
    """Mixture parameters: simplex weights, 3-d means, diagonal variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        m = weights.shape[0]
        if means.shape != (m, 3) or variances.shape != (m, 3):
            raise ValueError(
                f"shape mismatch: weights {weights.shape}, means {means.shape}, variances {variances.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be a simplex vector, got sum {weights.sum()!r}")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        if np.any(variances < VARIANCE_FLOOR):
            raise ValueError(f"variances must be >= {VARIANCE_FLOOR}")
        for arr in (weights, means, variances):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]


@dataclass
class EmTrace:
    """Per-iteration record of one EM fit.

    ``log_likelihoods[i]`` is the likelihood of the parameters entering
    update call ``i + 1``; ``rescued_iterations`` lists (1-based) calls
    where an empty component was re-seeded, which exempts that step from
    the monotonicity guarantee.
    """

    log_likelihoods: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    rescued_iterations: list[int] = field(default_factory=list)


def _log_densities(params: GmmParams, points: np.ndarray) -> np.ndarray:
    """Log of the diagonal Gaussian density per (point, component), shape (N, M)."""
    diff = points[:, None, :] - params.means[None, :, :]  # (N, M, 3)
    inv_var = 1.0 / params.variances  # (M, 3)
    with np.errstate(over="ignore"):  # extreme points overflow to -inf, handled downstream
        quad = np.einsum("nmd,md->nm", diff * diff, inv_var)
    log_norm = -0.5 * (3.0 * _LOG_2PI + np.log(params.variances).sum(axis=1))  # (M,)
    return log_norm[None, :] - 0.5 * quad


def _log_joint(params: GmmParams, points: np.ndarray) -> np.ndarray:
    """log(pi_m * N(s_n | mu_m, var_m)) with zero weights mapped to -inf."""
    with np.errstate(divide="ignore"):
        log_weights = np.log(params.weights)
    return _log_densities(params, points) + log_weights[None, :]


def _responsibility_matrix(params: GmmParams, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Responsibilities (N, M) and per-point log-likelihood (N,), in log space.

    Points whose total density underflows to zero (log-sum of -inf) fall
    back to uniform responsibilities.
    """
    log_joint = _log_joint(params, points)
    shift = np.max(log_joint, axis=1, keepdims=True)
    bad = ~np.isfinite(shift[:, 0])
    shift[bad, 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.exp(log_joint - shift)
        totals = weights.sum(axis=1, keepdims=True)
        log_like = shift[:, 0] + np.log(totals[:, 0])
        resp = weights / totals
    if np.any(bad):
        resp[bad, :] = 1.0 / params.n_components
    return resp, log_like


def responsibilities(params: GmmParams, point: Sequence[float]) -> np.ndarray:
    """Posterior component membership for one model-space point.

    Returns a nonnegative length-M vector summing to 1.
    """
    point = np.asarray(point, dtype=float).reshape(1, 3)
    resp, _ = _responsibility_matrix(params, point)
    return resp[0]


def log_likelihood(params: GmmParams, cloud: ModelCloud) -> float:
    """Total mixture log-likelihood of the cloud under ``params``."""
    _, log_like = _responsibility_matrix(params, cloud.as_array())
    return float(log_like.sum())


def em_step(
    params: GmmParams,
    cloud: ModelCloud,
    rng: np.random.Generator | None = None,
) -> tuple[GmmParams, float, tuple[int, ...]]:
    """One expectation-maximization update.

    Returns the updated parameters, the log-likelihood of the *input*
    parameters on the cloud, and the indices of components re-seeded by
    the empty-cluster rescue (empty tuple normally). The covariance
    update keeps only the diagonal of the weighted outer products.
    """
    points = cloud.as_array()
    n = points.shape[0]
    if n == 0:
        raise ValueError("cloud is empty")
    resp, log_like = _responsibility_matrix(params, points)
    total = float(log_like.sum())

    counts = resp.sum(axis=0)  # (M,)
    rescued = tuple(int(m) for m in np.nonzero(counts < RESCUE_THRESHOLD)[0])

    safe_counts = np.maximum(counts, RESCUE_THRESHOLD)
    weights = counts / n
    means = (resp.T @ points) / safe_counts[:, None]
    diff = points[:, None, :] - means[None, :, :]
    variances = np.einsum("nm,nmd->md", resp, diff * diff) / safe_counts[:, None]
    variances = np.maximum(variances, VARIANCE_FLOOR)

    if rescued:
        if rng is None:
            rng = np.random.default_rng(0)
        pooled = np.maximum(points.var(axis=0), VARIANCE_FLOOR)
        for m in rescued:
            means[m] = points[rng.integers(n)]
            variances[m] = pooled
            weights[m] = 1.0 / params.n_components
    weights = weights / weights.sum()

    return GmmParams(weights=weights, means=means, variances=variances), total, rescued


def _init_params(
    points: np.ndarray,
    n_components: int,
    rng: np.random.Generator,
    init: str,
) -> GmmParams:
    """Seeded initialization: distance-spread means or plain random picks.

    Both modes share equal weights and the pooled per-axis variance;
    ``kmeanspp`` picks means with probability proportional to squared
    distance from those already chosen, ``random`` picks uniformly.
    """
    n = points.shape[0]
    pooled = np.maximum(points.var(axis=0), VARIANCE_FLOOR)
    if init == "random":
        idx = rng.choice(n, size=n_components, replace=False)
    elif init == "kmeanspp":
        chosen = [int(rng.integers(n))]
        for _ in range(1, n_components):
            d2 = np.min(
                ((points[:, None, :] - points[chosen][None, :, :]) ** 2).sum(axis=2), axis=1
            )
            total = d2.sum()
            if total > 0:
                chosen.append(int(rng.choice(n, p=d2 / total)))
            else:
                chosen.append(int(rng.integers(n)))
        idx = np.array(chosen)
    else:
        raise ValueError(f"unknown init mode {init!r} (use 'kmeanspp' or 'random')")
    weights = np.full(n_components, 1.0 / n_components)
    means = points[idx].copy()
    variances = np.tile(pooled, (n_components, 1))
    return GmmParams(weights=weights, means=means, variances=variances)


def gmm_fit(
    cloud: ModelCloud,
    n_components: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    init: str = "kmeanspp",
) -> tuple[GmmParams, EmTrace]:
    """Fit a mixture to the cloud by iterating :func:`em_step`.

    Stops when the absolute log-likelihood change drops below ``tol`` or
    after ``max_iter`` updates. Deterministic for a given seed.
    """
    if n_components < 1:
        raise ValueError(f"need at least 1 component, got {n_components}")
    points = cloud.as_array()
    if points.shape[0] < n_components:
        raise ValueError(f"cloud of {points.shape[0]} points cannot support {n_components} components")

    rng = np.random.default_rng(seed)
    params = _init_params(points, n_components, rng, init)
    trace = EmTrace()
    prev_ll = None
    for call in range(1, max_iter + 1):
        new_params, ll, rescued = em_step(params, cloud, rng)
        trace.log_likelihoods.append(ll)
        if rescued:
            trace.rescued_iterations.append(call)
        if prev_ll is not None and not rescued and abs(ll - prev_ll) < tol:
            trace.converged = True
            trace.iterations = call - 1
            return params, trace
        prev_ll = ll
        params = new_params
        trace.iterations = call
    return params, trace


def extract_models(params: GmmParams, q: float, r: float) -> list[LinearModel]:
    """Turn each component mean into a bank model, sharing (q, r)."""
    return [
        LinearModel(a=float(mu[0]), b1=float(mu[1]), b2=float(mu[2]), q=q, r=r)
        for mu in params.means
    ]


def write_gmm_params(
    params: GmmParams,
    path: str | Path,
    seed: int,
    trace: EmTrace | None = None,
) -> None:
    """Export fitted parameters plus fit metadata as JSON."""
    payload = {
        "M": params.n_components,
        "weights": params.weights.tolist(),
        "means": params.means.tolist(),
        "variances": params.variances.tolist(),
        "seed": seed,
        "iterations": trace.iterations if trace else 0,
        "final_log_likelihood": trace.log_likelihoods[-1] if trace and trace.log_likelihoods else None,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_gmm_params(path: str | Path) -> GmmParams:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    params = GmmParams(
        weights=np.array(payload["weights"], dtype=float),
        means=np.array(payload["means"], dtype=float),
        variances=np.array(payload["variances"], dtype=float),
    )
    if params.n_components != payload["M"]:
        raise ValueError(f"{Path(path).name}: M={payload['M']} does not match {params.n_components} components")
    return params
