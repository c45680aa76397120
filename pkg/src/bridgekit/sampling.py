"""Samplers that turn a trained prediction network into draws.

All samplers walk a uniform time grid from the horizon down to 0 and
take batched states (B, ...). They accept either a Checkpoint, whose
objective tag is validated against the sampler family (bridge samplers
need a bridge-trained net, ancestral needs a marginal one), or a bare
callable predict(x_t, x_T, ts) -> x0_hat for oracles and tests.

dbim_sample follows the non-Markovian bridge update: each step re-poses
the state at the next grid time as a_s x_T + b_s x0_hat plus a mix of
the inferred direction and fresh noise. The first step off the horizon
always uses rho = c(t_next), which cancels the inferred-direction term
exactly where it is undefined (c(T) = 0); the last step lands on t = 0
where the update degenerates to x0_hat itself. With eta = 0 every other
step is noise-free; strict_deterministic additionally zeroes the forced
first-step noise so the whole map xT -> x0 is a deterministic function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as net
from . import schedules as sched
from .errors import ConfigError, ContractError
from .rng import RngStream

MIN_SDE_STEPS = 10  # Euler on the reverse bridge SDE is meaningless coarser

GRIDS = ("uniform_t", "quadratic_t")


@dataclass(frozen=True)
class SampleConfig:
    """Shared sampler knobs.

    The grid choice shapes the dbim time ladder: uniform_t spaces the
    n_steps+1 nodes evenly over [0, T], quadratic_t squares the uniform
    fractions so steps crowd toward t = 0 where reconstruction detail
    concentrates. The SDE and ancestral samplers always walk uniformly.
    """

    n_steps: int = 10
    eta: float = 0.0
    seed: int = 0
    strict_deterministic: bool = False
    grid: str = "uniform_t"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.grid not in GRIDS:
            raise ConfigError(f"grid must be one of {GRIDS}, got {self.grid!r}")

    def time_grid(self, horizon: float) -> np.ndarray:
        """Increasing node times t_0 = 0 .. t_N = horizon."""
        frac = np.linspace(0.0, 1.0, self.n_steps + 1)
        if self.grid == "quadratic_t":
            frac = frac * frac
        return horizon * frac


def _resolve_predictor(predictor, family: str):
    if isinstance(predictor, net.Checkpoint):
        want = "dbsm" if family == "bridge" else "dsm"
        if predictor.objective != want:
            raise ContractError(
                f"{family} sampler needs a net trained with the {want} objective, "
                f"checkpoint carries {predictor.objective!r}"
            )
        return predictor.predictor()
    if not callable(predictor):
        raise ContractError(f"predictor must be a Checkpoint or callable, got {type(predictor)}")
    return predictor


def dbim_sample(predictor, schedule: sched.NoiseSchedule, xT, cfg: SampleConfig) -> np.ndarray:
    """Generate x0 from x_T on an n_steps grid; returns shape of xT."""
    predict = _resolve_predictor(predictor, "bridge")
    xT = np.asarray(xT, dtype=np.float64)
    if xT.ndim < 2:
        raise ContractError(f"xT must be batched (B, ...), got shape {xT.shape}")
    grid = cfg.time_grid(schedule.horizon)
    rng = RngStream(cfg.seed, 0)
    x = xT.copy()
    for n in range(cfg.n_steps, 0, -1):
        t_cur, t_next = grid[n], grid[n - 1]
        cur = sched.bridge_coefficients(schedule, t_cur)
        nxt = sched.bridge_coefficients(schedule, t_next)
        first = n == cfg.n_steps
        rho = nxt.c if first else cfg.eta * nxt.c
        mix = np.sqrt(max(nxt.c2 - rho * rho, 0.0))
        x0_hat = np.asarray(predict(x, xT, np.full(x.shape[0], t_cur)), dtype=np.float64)
        step = nxt.a * xT + nxt.b * x0_hat
        if mix > 0.0:
            eps_hat = (x - cur.a * xT - cur.b * x0_hat) / cur.c
            step = step + mix * eps_hat
        if rho > 0.0 and not (first and cfg.strict_deterministic):
            step = step + rho * rng.normals(x.shape)
        x = step
    return x


def reverse_bridge_sde_sample(predictor, schedule: sched.NoiseSchedule, xT,
                              cfg: SampleConfig) -> np.ndarray:
    """Euler-Maruyama on the reverse bridge SDE from the horizon to 0.

    The drift is f(x,t) - g^2 (s - h) with s the net-implied bridge score
    and h the pinning term grad log p(x_T | x_t). Both blow up at the
    endpoints, so drift evaluations clamp t into the schedule's interior
    [t_clamp_lo, t_clamp_hi]; the grid itself still reaches 0.
    """
    predict = _resolve_predictor(predictor, "bridge")
    if cfg.n_steps < MIN_SDE_STEPS:
        raise ConfigError(f"reverse bridge SDE needs n_steps >= {MIN_SDE_STEPS}, got {cfg.n_steps}")
    xT = np.asarray(xT, dtype=np.float64)
    if xT.ndim < 2:
        raise ContractError(f"xT must be batched (B, ...), got shape {xT.shape}")
    T = schedule.horizon
    grid = np.linspace(0.0, T, cfg.n_steps + 1)
    rng = RngStream(cfg.seed, 0)
    x = xT.copy()
    for n in range(cfg.n_steps, 0, -1):
        t_cur, t_next = grid[n], grid[n - 1]
        t_eval = min(max(t_cur, schedule.t_clamp_lo), schedule.t_clamp_hi)
        dt = t_next - t_cur  # negative
        ts = np.full(x.shape[0], t_eval)
        x0_hat = np.asarray(predict(x, xT, ts), dtype=np.float64)
        score = net.score_from_prediction(schedule, x, xT, ts, x0_hat)
        alpha, sigma = sched.alpha_sigma(schedule, t_eval)
        alpha_T, sigma_T = sched.alpha_sigma(schedule, T)
        ar = alpha_T / alpha
        v = sigma_T * sigma_T - ar * ar * sigma * sigma
        h = (ar * xT - ar * ar * x) / v
        f_lin = float(sched.linear_drift_arrays(schedule, np.array([t_eval]))[0])
        g = float(sched.diffusion_coefficient_arrays(schedule, np.array([t_eval]))[0])
        drift = f_lin * x - (g * g) * (score - h)
        x = x + drift * dt + g * np.sqrt(-dt) * rng.normals(x.shape)
    return x


def ddpm_ancestral_sample(predictor, schedule: sched.NoiseSchedule, cfg: SampleConfig,
                          shape=None, x_init=None, t_start: float | None = None) -> np.ndarray:
    """Ancestral sampling with the exact Gaussian posterior per step.

    Either pass `shape` to start from the horizon prior N(0, sigma_T^2 I)
    (alpha_T is negligible for vp schedules, which is the usual terminal
    approximation), or pass `x_init` with `t_start` to denoise a given
    noisy state from an interior time. Each step conditions on x0_hat via
    q(x_s | x_t, x0_hat); the final step lands on x0_hat exactly.
    """
    predict = _resolve_predictor(predictor, "marginal")
    rng = RngStream(cfg.seed, 0)
    T = schedule.horizon
    if (shape is None) == (x_init is None):
        raise ContractError("pass exactly one of shape or x_init")
    if x_init is None:
        if t_start is not None:
            raise ContractError("t_start only applies with x_init")
        t_start = T
        _, sigma_T = sched.alpha_sigma(schedule, T)
        x = sigma_T * rng.normals(tuple(shape))
    else:
        x = np.asarray(x_init, dtype=np.float64).copy()
        if t_start is None:
            raise ContractError("x_init needs an explicit t_start")
        if not 0.0 < t_start <= T:
            raise ContractError(f"t_start must lie in (0, {T}], got {t_start}")
    if x.ndim < 2:
        raise ContractError(f"state must be batched (B, ...), got shape {x.shape}")
    grid = np.linspace(0.0, t_start, cfg.n_steps + 1)
    for n in range(cfg.n_steps, 0, -1):
        t_cur, t_next = grid[n], grid[n - 1]
        x0_hat = np.asarray(predict(x, None, np.full(x.shape[0], t_cur)), dtype=np.float64)
        ratio, var_ts = sched.conditional_gaussian(schedule, t_next, t_cur)
        alpha_s, sigma_s = sched.alpha_sigma(schedule, t_next)
        _, sigma_t = sched.alpha_sigma(schedule, t_cur)
        st2 = sigma_t * sigma_t
        mean = (ratio * (sigma_s * sigma_s) / st2) * x + (alpha_s * var_ts / st2) * x0_hat
        var = (sigma_s * sigma_s) * var_ts / st2
        x = mean
        if var > 0.0:
            x = x + np.sqrt(var) * rng.normals(x.shape)
    return x


def partial_diffusion_counterfactual(predictor, schedule: sched.NoiseSchedule, x_in,
                                     t_star: float, cfg: SampleConfig) -> np.ndarray:
    """Noise the input to t_star along the forward marginal, then denoise.

    The partial-noising baseline: with t_star at the horizon this is full
    generation initialized from the input's noised state; smaller t_star
    keeps more of the input's identity.
    """
    x_in = np.asarray(x_in, dtype=np.float64)
    if x_in.ndim < 2:
        raise ContractError(f"input must be batched (B, ...), got shape {x_in.shape}")
    T = schedule.horizon
    if not 0.0 < t_star < T:
        raise ContractError(f"t_star must lie strictly inside (0, {T}), got {t_star}")
    rng = RngStream(cfg.seed, 1)  # stream 1: the forward noising draw
    alpha, sigma = sched.alpha_sigma(schedule, t_star)
    x_noised = alpha * x_in + sigma * rng.normals(x_in.shape)
    return ddpm_ancestral_sample(predictor, schedule, cfg, x_init=x_noised, t_start=t_star)
