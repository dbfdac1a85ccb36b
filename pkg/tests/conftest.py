import numpy as np
import pytest

from skidest.sysid import ModelCloud, ModelPoint
from skidest.trajectory import Trajectory, TrajectorySample


def simulate_run(
    triple,
    u,
    x0=0.0,
    process_noise_std=0.0,
    rng=None,
    run_id="sim",
    dt=0.1,
):
    """Exact scalar simulation of x[k+1] = a*x + b1*u_l + b2*u_r (+ noise)."""
    a, b1, b2 = triple
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    n = u.shape[0]
    noise = np.zeros(n) if rng is None else rng.normal(0.0, process_noise_std, size=n)
    x = np.empty(n + 1)
    x[0] = x0
    for k in range(n):
        x[k + 1] = a * x[k] + b1 * u[k, 0] + b2 * u[k, 1] + noise[k]
    samples = tuple(
        TrajectorySample(x_k=float(x[k]), u_k=(float(u[k, 0]), float(u[k, 1])), x_next=float(x[k + 1]))
        for k in range(n)
    )
    return Trajectory(run_id=run_id, dt=dt, samples=samples)


def square_inputs(n, amplitude=2.0, periods=(7, 11), seed=0):
    """Deterministic per-wheel excitation rich enough for rank-3 windows."""
    rng = np.random.default_rng(seed)
    u = np.empty((n, 2))
    for wheel, period in enumerate(periods):
        levels = rng.uniform(-amplitude, amplitude, size=n // period + 2)
        for k in range(n):
            u[k, wheel] = levels[k // period]
    return u


def cloud_from_array(points, run_id="cloud", window=25, stride=1):
    """Wrap an (N, 3) array as a model cloud for clustering tests."""
    points = np.asarray(points, dtype=float)
    return ModelCloud(
        points=tuple(
            ModelPoint(a=float(p[0]), b1=float(p[1]), b2=float(p[2]), run_id=run_id, start_index=i)
            for i, p in enumerate(points)
        ),
        window=window,
        stride=stride,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
