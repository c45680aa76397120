"""Denoising objectives and the training loop.

Two objectives, both regressing a data prediction:

  dbsm  bridge score matching: x_t is drawn from the bridge kernel
        q(x_t | x_0, x_T) and the implied score is matched against the
        kernel's own score.
  dsm   plain denoising score matching on the unpinned marginal.

Each supports two weightings that differ only by a per-sample factor:
"unit_x0_mse" is the mean squared error on x_0 directly, "unit_score"
the mean squared error between implied and analytic scores. For the
bridge the two integrands are related by (b/c^2)^2 per sample, which the
weighting tests pin down.

The loop is deterministic end to end: every step draws its batch
indices, times and noise from a stream derived from (seed, step), so a
seed reproduces the loss curve bitwise, and a run resumed from a
checkpoint continues it bitwise.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import network as net
from . import schedules as sched
from .errors import ConfigError, ContractError, TrainingError
from .rng import RngStream

OPTIMIZERS = ("adam", "radam")
WEIGHTINGS = ("unit_x0_mse", "unit_score")

DEFAULT_LEARNING_RATE = 1e-4  # the published choice for the imaging runs


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "dbsm"
    total_steps: int = 1000
    batch_size: int = 16
    learning_rate: float = DEFAULT_LEARNING_RATE
    weighting: str = "unit_x0_mse"
    optimizer: str = "radam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.objective not in net.OBJECTIVES:
            raise ConfigError(f"objective must be one of {net.OBJECTIVES}, got {self.objective!r}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be >= 1")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")


def draw_training_times(schedule: sched.NoiseSchedule, rng: RngStream, n: int) -> np.ndarray:
    """Uniform times on the clamped interior [t_clamp_lo, t_clamp_hi]."""
    u = rng.uniforms(n)
    return schedule.t_clamp_lo + u * (schedule.t_clamp_hi - schedule.t_clamp_lo)


def _per_sample(arr, ndim):
    return arr.reshape((-1,) + (1,) * (ndim - 1))


def dbsm_loss(pv: dict, net_cfg: net.ScoreNetworkConfig, schedule: sched.NoiseSchedule,
              x0: np.ndarray, xT: np.ndarray, ts: np.ndarray, noise: np.ndarray,
              weighting: str = "unit_x0_mse") -> "ag.Var":
    """Bridge score matching loss on one batch, given its noise draws."""
    a, b, c = sched.bridge_coefficient_arrays(schedule, ts)
    c2 = c * c
    if np.any(c2 == 0.0):
        raise ContractError("training times hit a degenerate kernel; tighten the t clamps")
    ab, bb, cb, c2b = (_per_sample(v, x0.ndim) for v in (a, b, c, c2))
    x_t = ab * xT + bb * x0 + cb * noise
    pred = net.forward_vars(pv, net_cfg, x_t, xT, ts)
    if weighting == "unit_x0_mse":
        diff = ag.sub(pred, ag.Var(x0))
    else:
        # implied score: -(x_t - a x_T - b x0_hat)/c^2, vs the kernel score
        resid = ag.Var((x_t - ab * xT) / c2b)
        implied = ag.sub(ag.mul(pred, ag.Var(bb / c2b)), resid)
        target = -(x_t - ab * xT - bb * x0) / c2b
        diff = ag.sub(implied, ag.Var(target))
    return ag.mean(ag.mul(diff, diff))


def dsm_loss(pv: dict, net_cfg: net.ScoreNetworkConfig, schedule: sched.NoiseSchedule,
             x0: np.ndarray, ts: np.ndarray, noise: np.ndarray,
             weighting: str = "unit_x0_mse") -> "ag.Var":
    """Denoising score matching loss on the unpinned marginal."""
    alpha, sigma = sched.alpha_sigma_arrays(schedule, ts)
    s2 = sigma * sigma
    if np.any(s2 == 0.0):
        raise ContractError("training times hit sigma = 0; tighten the t clamps")
    al, sg, s2b = (_per_sample(v, x0.ndim) for v in (alpha, sigma, s2))
    x_t = al * x0 + sg * noise
    pred = net.forward_vars(pv, net_cfg, x_t, None, ts)
    if weighting == "unit_x0_mse":
        diff = ag.sub(pred, ag.Var(x0))
    else:
        resid = ag.Var(x_t / s2b)
        implied = ag.sub(ag.mul(pred, ag.Var(al / s2b)), resid)
        target = -(x_t - al * x0) / s2b
        diff = ag.sub(implied, ag.Var(target))
    return ag.mean(ag.mul(diff, diff))


@dataclass
class OptState:
    m1: dict
    m2: dict
    step: int = 0

    @classmethod
    def fresh(cls, params: dict) -> "OptState":
        return cls(
            m1={k: np.zeros_like(v) for k, v in params.items()},
            m2={k: np.zeros_like(v) for k, v in params.items()},
        )


def optimizer_step(params: dict, grads: dict, state: OptState, cfg: TrainConfig) -> None:
    """One Adam or RAdam update in place; state.step advances by one.

    RAdam follows the rectified variance rule: while the variance
    estimate's degrees of freedom rho_t stay <= 4 the step uses the bias
    corrected first moment only; afterwards the adaptive step is scaled
    by the rectification factor r_t.
    """
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    if cfg.optimizer == "radam":
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho_t = rho_inf - 2.0 * t * (b2 ** t) / bc2
        rect = None
        if rho_t > 4.0:
            rect = math.sqrt(
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
            )
    for name, p in params.items():
        g = grads[name]
        m = state.m1[name]
        v = state.m2[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        if cfg.optimizer == "adam":
            p -= cfg.learning_rate * m_hat / (np.sqrt(v / bc2) + cfg.eps)
        elif rect is None:
            p -= cfg.learning_rate * m_hat
        else:
            p -= cfg.learning_rate * rect * m_hat / (np.sqrt(v / bc2) + cfg.eps)


def _gradients(loss: "ag.Var", pv: dict, step: int) -> dict:
    if not np.isfinite(loss.value):
        raise TrainingError(f"non-finite loss at step {step}")
    loss.backward()
    grads = {}
    for name, var in pv.items():
        g = var.grad if var.grad is not None else np.zeros_like(var.value)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name!r} at step {step}")
        grads[name] = g
    return grads


@dataclass
class TrainResult:
    checkpoint: net.Checkpoint
    history: list = field(default_factory=list)  # (step, loss, wall_ms) rows


def _resume_state(resume_from: net.Checkpoint, schedule, net_cfg, cfg):
    """Params, moments and step recovered from a checkpoint, validated."""
    if resume_from.net != net_cfg:
        raise ContractError("resume checkpoint was trained with a different network config")
    if resume_from.schedule != schedule:
        raise ContractError("resume checkpoint was trained with a different schedule")
    if resume_from.objective != cfg.objective:
        raise ContractError(
            f"resume checkpoint carries objective {resume_from.objective!r}, "
            f"config asks for {cfg.objective!r}"
        )
    if resume_from.moments is None:
        raise ContractError("resume checkpoint has no optimizer moments")
    if resume_from.step >= cfg.total_steps:
        raise ConfigError(
            f"resume checkpoint is already at step {resume_from.step}; "
            f"total_steps {cfg.total_steps} adds nothing"
        )
    params = {k: np.array(v, dtype=np.float64) for k, v in resume_from.params.items()}
    for slot in ("m1", "m2"):
        if set(resume_from.moments[slot]) != set(params):
            raise ContractError(f"resume checkpoint moments {slot!r} do not cover the parameters")
    state = OptState(
        m1={k: np.array(v, dtype=np.float64) for k, v in resume_from.moments["m1"].items()},
        m2={k: np.array(v, dtype=np.float64) for k, v in resume_from.moments["m2"].items()},
        step=resume_from.step,
    )
    return params, state


def train(schedule: sched.NoiseSchedule, net_cfg: net.ScoreNetworkConfig, cfg: TrainConfig,
          x0: np.ndarray, xT: np.ndarray | None = None, out_dir=None,
          log_path=None, resume_from: net.Checkpoint | None = None) -> TrainResult:
    """Run the full loop; returns the final checkpoint and history.

    x0 (and xT for the bridge objective) hold the whole training set,
    sample-major. Checkpoints land in out_dir as ckpt_<step>.bten plus
    ckpt_final.bten; the log is CSV with header step,loss,wall_ms.
    Passing a checkpoint as resume_from continues its step counter with
    the same per-step draws an uninterrupted run would have used, so the
    result is bitwise identical to training straight through; an
    existing log at log_path is appended to in that case.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if cfg.objective == "dbsm":
        if not net_cfg.conditional:
            raise ConfigError("bridge objective needs a conditional network")
        if xT is None:
            raise ContractError("bridge objective needs paired x_T data")
        xT = np.asarray(xT, dtype=np.float64)
        if xT.shape != x0.shape:
            raise ContractError(f"x_T shape {xT.shape} does not match x0 {x0.shape}")
    else:
        if net_cfg.conditional:
            raise ConfigError("marginal objective needs an unconditional network")
        if xT is not None:
            raise ContractError("marginal objective takes no x_T data")

    rng = RngStream(cfg.seed, 0)
    if resume_from is None:
        params = net.init_params(net_cfg, rng.derive(0))
        state = OptState.fresh(params)
        start_step = 1
    else:
        params, state = _resume_state(resume_from, schedule, net_cfg, cfg)
        start_step = resume_from.step + 1
    draw_root = rng.derive(1)
    n_data = x0.shape[0]
    history = []
    log_file = None
    if log_path is not None:
        append = resume_from is not None and Path(log_path).exists()
        log_file = open(log_path, "a" if append else "w", encoding="utf-8")
        if not append:
            log_file.write("step,loss,wall_ms\n")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def make_ckpt(step):
        return net.Checkpoint(
            params={k: v.copy() for k, v in params.items()},
            net=net_cfg,
            schedule=schedule,
            objective=cfg.objective,
            step=step,
            moments={
                "m1": {k: v.copy() for k, v in state.m1.items()},
                "m2": {k: v.copy() for k, v in state.m2.items()},
            },
        )

    try:
        for step in range(start_step, cfg.total_steps + 1):
            tic = time.perf_counter()
            draw = draw_root.derive(step)
            idx = draw.integers(cfg.batch_size, n_data)
            ts = draw_training_times(schedule, draw, cfg.batch_size)
            noise = draw.normals(x0[idx].shape)
            pv = {k: ag.Var(v) for k, v in params.items()}
            if cfg.objective == "dbsm":
                loss = dbsm_loss(pv, net_cfg, schedule, x0[idx], xT[idx], ts, noise,
                                 cfg.weighting)
            else:
                loss = dsm_loss(pv, net_cfg, schedule, x0[idx], ts, noise, cfg.weighting)
            grads = _gradients(loss, pv, step)
            optimizer_step(params, grads, state, cfg)
            wall_ms = (time.perf_counter() - tic) * 1000.0
            history.append((step, float(loss.value), wall_ms))
            if log_file is not None:
                log_file.write(f"{step},{float(loss.value):.10g},{wall_ms:.3f}\n")
            if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                net.save_checkpoint(out / f"ckpt_{step:06d}.bten", make_ckpt(step))
    finally:
        if log_file is not None:
            log_file.close()

    ckpt = make_ckpt(cfg.total_steps)
    if out is not None:
        net.save_checkpoint(out / "ckpt_final.bten", ckpt)
    return TrainResult(checkpoint=ckpt, history=history)
