"""Bridge process: exact kernel draws, path simulation, analytic scores.

The forward bridge conditions the base diffusion on hitting x_T at the
horizon. Its transition from x_0 is the Gaussian bridge kernel with the
coefficients from schedules.py, and its SDE form adds the h-transform
drift g(t)^2 grad log p(x_T | x_t) to the base drift. For the Gaussian
transition p(x_T | x_t) = N(ar x_t, v) with ar = alpha_T / alpha_t and
v = sigma_T^2 - ar^2 sigma_t^2 that extra drift is (ar x_T - ar^2 x_t)/v
times g^2, affine in the state, which is what lets the Euler recursion
run inside the affine path kernel.
"""

from __future__ import annotations

import numpy as np

from . import schedules as sched
from .errors import ContractError, DomainError
from .kernels import affine_euler_path
from .rng import RngStream

# Euler integration stops this fraction of the horizon short of T, where
# the h-transform drift diverges; the path is within O(delta) of x_T there.
TERMINAL_PIN_FRACTION = 1e-4

# paths are simulated in column chunks so the per-chunk noise block stays
# around 32 MB regardless of path count
_CHUNK_BUDGET = 4_000_000


def _pair_shapes(x0, xT):
    x0 = np.asarray(x0, dtype=np.float64)
    xT = np.asarray(xT, dtype=np.float64)
    if x0.shape != xT.shape:
        raise ContractError(f"x0 and xT must share a shape, got {x0.shape} and {xT.shape}")
    return x0, xT


def sample_bridge_kernel(schedule: sched.NoiseSchedule, x0, xT, t: float,
                         rng: RngStream) -> np.ndarray:
    """One exact draw from q(x_t | x_0, x_T) = N(a x_T + b x_0, c^2 I)."""
    x0, xT = _pair_shapes(x0, xT)
    co = sched.bridge_coefficients(schedule, t)
    return co.a * xT + co.b * x0 + co.c * rng.normals(x0.shape)


def sample_bridge_kernel_batch(schedule: sched.NoiseSchedule, x0, xT, ts,
                               rng: RngStream) -> np.ndarray:
    """Per-sample-time kernel draws; x0, xT are (B, ...) and ts is (B,)."""
    x0, xT = _pair_shapes(x0, xT)
    ts = np.asarray(ts, dtype=np.float64)
    if ts.shape != (x0.shape[0],):
        raise ContractError(f"ts must be (batch,), got {ts.shape} for batch {x0.shape[0]}")
    a, b, c = sched.bridge_coefficient_arrays(schedule, ts)
    shape = (-1,) + (1,) * (x0.ndim - 1)
    a, b, c = a.reshape(shape), b.reshape(shape), c.reshape(shape)
    return a * xT + b * x0 + c * rng.normals(x0.shape)


def analytic_bridge_score(schedule: sched.NoiseSchedule, x_t, x0, xT, t: float) -> np.ndarray:
    """grad_{x_t} log q(x_t | x_0, x_T); needs c(t) > 0, so t in (0, T)."""
    x0, xT = _pair_shapes(x0, xT)
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != x0.shape:
        raise ContractError(f"x_t shape {x_t.shape} does not match x0 shape {x0.shape}")
    co = sched.bridge_coefficients(schedule, t)
    if co.c == 0.0:
        raise DomainError(f"bridge kernel is degenerate at t={t}; score undefined")
    return -(x_t - co.a * xT - co.b * x0) / co.c2


def h_transform_drift_coefficients(schedule: sched.NoiseSchedule, ts: np.ndarray):
    """Per-time affine pieces of the full forward-bridge drift.

    Returns (lin, aff) with drift(x, t) = lin(t) * x + aff(t) * x_T.
    """
    ts = np.asarray(ts, dtype=np.float64)
    alpha, sigma = sched.alpha_sigma_arrays(schedule, ts)
    alpha_T, sigma_T = sched.alpha_sigma(schedule, schedule.horizon)
    ar = alpha_T / alpha
    v = sigma_T * sigma_T - (ar * ar) * (sigma * sigma)
    if np.any(v <= 0.0):
        raise DomainError("h-transform drift evaluated at or past the horizon")
    g = sched.diffusion_coefficient_arrays(schedule, ts)
    g2 = g * g
    f_lin = sched.linear_drift_arrays(schedule, ts)
    lin = f_lin - g2 * (ar * ar) / v
    aff = g2 * ar / v
    return lin, aff


def euler_maruyama_forward_bridge(schedule: sched.NoiseSchedule, x0, xT, n_steps: int,
                                  rng: RngStream, record_at=None) -> np.ndarray:
    """Euler-Maruyama paths of the forward bridge SDE started at x_0.

    The grid is uniform from 0 to T * (1 - TERMINAL_PIN_FRACTION); the
    drift is singular at T itself, and by construction the path is pinned
    onto x_T as the grid end approaches T. record_at lists times to
    record, each snapped to the nearest grid node; by default the whole
    path is recorded, node by node. Returns an array of shape
    (len(record_at),) + x0.shape.

    Paths are flattened and simulated in fixed-size column chunks, each
    fed by a noise stream derived from its starting column, so the live
    noise block stays bounded however many paths are requested.
    """
    x0, xT = _pair_shapes(x0, xT)
    if n_steps < 2:
        raise ContractError(f"n_steps must be >= 2, got {n_steps}")
    T = schedule.horizon
    t_end = T * (1.0 - TERMINAL_PIN_FRACTION)
    grid = np.linspace(0.0, t_end, n_steps + 1)
    if record_at is None:
        record_at = grid.copy()
    record_at = np.asarray(record_at, dtype=np.float64)
    if record_at.ndim != 1 or record_at.size == 0:
        raise ContractError("record_at must be a non-empty 1d array of times")
    if np.any(record_at < 0.0) or np.any(record_at > t_end):
        raise DomainError(f"record times must lie in [0, {t_end}]")
    snap_idx = np.rint(record_at / (t_end / n_steps)).astype(np.int64)

    dt = np.diff(grid)
    left = grid[:-1]
    lin, aff = h_transform_drift_coefficients(schedule, left)
    g = sched.diffusion_coefficient_arrays(schedule, left)
    P = dt * lin
    Q = dt * aff
    S = g * np.sqrt(dt)

    flat0 = x0.reshape(-1)
    flatT = xT.reshape(-1)
    n = flat0.shape[0]
    chunk = max(1, _CHUNK_BUDGET // n_steps)
    inner_idx = np.unique(snap_idx[snap_idx > 0])
    out = np.empty((record_at.shape[0], n), dtype=np.float64)
    zero_rows = snap_idx == 0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        noise = rng.derive(start).normals((n_steps, stop - start))
        snaps = affine_euler_path(flat0[start:stop], flatT[start:stop], P, Q, S, noise, inner_idx)
        for row, si in enumerate(snap_idx):
            if si == 0:
                continue
            out[row, start:stop] = snaps[np.searchsorted(inner_idx, si)]
    if np.any(zero_rows):
        out[zero_rows] = flat0
    return out.reshape((record_at.shape[0],) + x0.shape)


def gaussian_posterior_mean_oracle(schedule: sched.NoiseSchedule, x_t, xT, t: float,
                                   prior_var: float, noise_var: float,
                                   prior_mean: float = 0.0) -> np.ndarray:
    """Exact E[x_0 | x_t, x_T] for the linear-Gaussian toy model.

    The toy model draws x_0 ~ N(prior_mean, prior_var I) and observes
    x_T = x_0 + eta with eta ~ N(0, noise_var I); x_t then follows the
    bridge kernel. Conditioning in two stages gives

        x_0 | x_T ~ N(mu0, v0),  mu0 = m + p (x_T - m) / (p + q),
                                 v0 = p q / (p + q)
        E[x_0 | x_t, x_T] = (mu0 c^2 + v0 b (x_t - a x_T)) / (c^2 + v0 b^2).

    noise_var = inf is the limit where x_T carries no direct information
    about x_0 (mu0 -> m, v0 -> p) yet still anchors the bridge kernel.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    xT = np.asarray(xT, dtype=np.float64)
    if not prior_var > 0.0:
        raise ContractError(f"prior_var must be > 0, got {prior_var}")
    if not noise_var > 0.0:
        raise ContractError(f"noise_var must be > 0, got {noise_var}")
    if np.isinf(noise_var):
        mu0 = np.full_like(xT, prior_mean)
        v0 = prior_var
    else:
        mu0 = prior_mean + prior_var * (xT - prior_mean) / (prior_var + noise_var)
        v0 = prior_var * noise_var / (prior_var + noise_var)
    co = sched.bridge_coefficients(schedule, t)
    denom = co.c2 + v0 * co.b * co.b
    if denom == 0.0:
        # t = T: the kernel pins x_t = x_T and adds nothing beyond x_T
        # itself, so the posterior mean is the x_T-conditioned prior mean.
        return np.broadcast_to(mu0, x_t.shape).copy()
    return (mu0 * co.c2 + v0 * co.b * (x_t - co.a * xT)) / denom


def sample_gaussian_toy_pairs(rng: RngStream, n: int, d: int, prior_var: float,
                              noise_var: float, prior_mean: float = 0.0):
    """(x_0, x_T) pairs from the linear-Gaussian toy model."""
    if n < 1 or d < 1:
        raise ContractError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if not (prior_var > 0.0 and noise_var > 0.0) or np.isinf(noise_var):
        raise ContractError("prior_var and noise_var must be positive finite for sampling")
    x0 = prior_mean + np.sqrt(prior_var) * rng.normals((n, d))
    xT = x0 + np.sqrt(noise_var) * rng.normals((n, d))
    return x0, xT
