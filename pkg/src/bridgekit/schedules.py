"""Noise schedules and bridge coefficients.

A schedule fixes the Gaussian forward marginal x_t | x_0 ~ N(alpha_t x_0,
sigma_t^2 I) on [0, horizon]. Two kinds are supported:

  vp        alpha_t = exp(-0.5 * int_0^t beta(s) ds) with beta linear in s,
            sigma_t = sqrt(1 - alpha_t^2), so alpha^2 + sigma^2 = 1.
  brownian  alpha_t = 1, sigma_t = sqrt(t).

Pinning the endpoint x_T turns the marginal into a bridge with kernel
q(x_t | x_0, x_T) = N(a_t x_T + b_t x_0, c_t^2 I) where, writing r for the
signal-to-noise ratio SNR(T)/SNR(t),

  a_t = (alpha_t / alpha_T) * r
  b_t = alpha_t * (1 - r)
  c_t^2 = sigma_t^2 * (1 - r).

All schedule math is float64. Scalar entry points delegate to the array
versions so both take the same floating-point path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError

SCHEDULE_KINDS = ("vp", "brownian")

DEFAULT_BETA_MIN = 0.1
DEFAULT_BETA_MAX = 20.0
DEFAULT_T_CLAMP = 1e-3  # fraction of the horizon kept clear at both ends


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward noising process on [0, horizon]."""

    kind: str
    horizon: float = 1.0
    beta_min: float = DEFAULT_BETA_MIN
    beta_max: float = DEFAULT_BETA_MAX
    t_clamp_lo: float = -1.0  # -1 means "use the relative default"
    t_clamp_hi: float = -1.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if not self.horizon > 0.0:
            raise ConfigError(f"horizon must be > 0, got {self.horizon}")
        if self.kind == "vp":
            if not self.beta_min > 0.0:
                raise ConfigError(f"beta_min must be > 0, got {self.beta_min}")
            if self.beta_max < self.beta_min:
                raise ConfigError(
                    f"beta_max must be >= beta_min, got {self.beta_max} < {self.beta_min}"
                )
        if self.t_clamp_lo < 0.0:
            object.__setattr__(self, "t_clamp_lo", DEFAULT_T_CLAMP * self.horizon)
        if self.t_clamp_hi < 0.0:
            object.__setattr__(self, "t_clamp_hi", (1.0 - DEFAULT_T_CLAMP) * self.horizon)
        if not 0.0 < self.t_clamp_lo < self.t_clamp_hi < self.horizon:
            raise ConfigError(
                "t clamps must satisfy 0 < lo < hi < horizon, got "
                f"lo={self.t_clamp_lo} hi={self.t_clamp_hi} horizon={self.horizon}"
            )

    @classmethod
    def vp(cls, beta_min: float = DEFAULT_BETA_MIN, beta_max: float = DEFAULT_BETA_MAX,
           horizon: float = 1.0) -> "NoiseSchedule":
        return cls(kind="vp", horizon=horizon, beta_min=beta_min, beta_max=beta_max)

    @classmethod
    def brownian(cls, horizon: float = 1.0) -> "NoiseSchedule":
        return cls(kind="brownian", horizon=horizon)

    def with_clamps(self, lo: float, hi: float) -> "NoiseSchedule":
        return replace(self, t_clamp_lo=lo, t_clamp_hi=hi)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "horizon": self.horizon,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "t_clamp_lo": self.t_clamp_lo,
            "t_clamp_hi": self.t_clamp_hi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(**d)


@dataclass(frozen=True)
class BridgeCoefficients:
    """Coefficients of the bridge kernel mean a*x_T + b*x_0 and std c."""

    a: float
    b: float
    c: float

    @property
    def c2(self) -> float:
        return self.c * self.c


def _check_times(schedule: NoiseSchedule, ts: np.ndarray, name: str = "t") -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    if not np.all(np.isfinite(ts)):
        raise DomainError(f"{name} must be finite")
    if np.any(ts < 0.0) or np.any(ts > schedule.horizon):
        bad = ts[(ts < 0.0) | (ts > schedule.horizon)]
        raise DomainError(
            f"{name} must lie in [0, {schedule.horizon}], got {float(bad.flat[0])}"
        )
    return ts


def beta_arrays(schedule: NoiseSchedule, ts: np.ndarray) -> np.ndarray:
    """beta(t) for vp schedules, linear from beta_min to beta_max over [0, T]."""
    if schedule.kind != "vp":
        raise DomainError(f"beta(t) is defined for vp schedules only, got {schedule.kind!r}")
    ts = _check_times(schedule, ts)
    return schedule.beta_min + (schedule.beta_max - schedule.beta_min) * (ts / schedule.horizon)


def alpha_sigma_arrays(schedule: NoiseSchedule, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ts = _check_times(schedule, ts)
    if schedule.kind == "vp":
        integral = schedule.beta_min * ts + 0.5 * (schedule.beta_max - schedule.beta_min) * (
            ts * ts / schedule.horizon
        )
        alpha = np.exp(-0.5 * integral)
        sigma = np.sqrt(1.0 - alpha * alpha)
    else:
        alpha = np.ones_like(ts)
        sigma = np.sqrt(ts)
    return alpha, sigma


def alpha_sigma(schedule: NoiseSchedule, t: float) -> tuple[float, float]:
    """(alpha_t, sigma_t) of the forward marginal at time t."""
    alpha, sigma = alpha_sigma_arrays(schedule, np.array([t]))
    return float(alpha[0]), float(sigma[0])


def snr_ratio_arrays(schedule: NoiseSchedule, t_num: np.ndarray, t_den: np.ndarray) -> np.ndarray:
    a_n, s_n = alpha_sigma_arrays(schedule, np.asarray(t_num, dtype=np.float64))
    a_d, s_d = alpha_sigma_arrays(schedule, np.asarray(t_den, dtype=np.float64))
    num = (a_n * a_n) * (s_d * s_d)
    den = (s_n * s_n) * (a_d * a_d)
    bad = den == 0.0
    if np.any(bad):
        # den = 0 means SNR(t_num) is infinite; neither inf/finite nor the
        # 0/0 case at coinciding endpoints has a truthful float value.
        t_bad = float(np.broadcast_to(np.asarray(t_num, dtype=np.float64), bad.shape)[bad].flat[0])
        raise DomainError(f"snr ratio is infinite or 0/0 at t_num={t_bad}")
    return num / den


def snr_ratio(schedule: NoiseSchedule, t_num: float, t_den: float) -> float:
    """SNR(t_num) / SNR(t_den) with SNR(t) = alpha_t^2 / sigma_t^2.

    Returns 0 exactly when sigma(t_den) = 0 (the denominator SNR is
    infinite). Raises DomainError when the ratio itself would be infinite
    or of the 0/0 kind, i.e. whenever sigma(t_num) = 0.
    """
    r = snr_ratio_arrays(schedule, np.array([t_num]), np.array([t_den]))
    return float(r[0])


def bridge_coefficient_arrays(
    schedule: NoiseSchedule, ts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(a, b, c) arrays of the bridge kernel at each time in ts."""
    ts = _check_times(schedule, ts)
    alpha, sigma = alpha_sigma_arrays(schedule, ts)
    alpha_T, sigma_T = alpha_sigma(schedule, schedule.horizon)
    # r = SNR(T)/SNR(t); the sigma^2 factor in the numerator makes r = 0
    # exact at t = 0 without a special case.
    r = (alpha_T * alpha_T) * (sigma * sigma) / ((alpha * alpha) * (sigma_T * sigma_T))
    a = (alpha / alpha_T) * r
    b = alpha * (1.0 - r)
    # rounding can push r a hair past 1 at t ~ T; clamp the variance at 0
    c2 = np.maximum((sigma * sigma) * (1.0 - r), 0.0)
    return a, b, np.sqrt(c2)


def bridge_coefficients(schedule: NoiseSchedule, t: float) -> BridgeCoefficients:
    """Bridge kernel coefficients at time t, valid on the closed [0, T]."""
    a, b, c = bridge_coefficient_arrays(schedule, np.array([t]))
    return BridgeCoefficients(a=float(a[0]), b=float(b[0]), c=float(c[0]))


def diffusion_coefficient_arrays(schedule: NoiseSchedule, ts: np.ndarray) -> np.ndarray:
    """g(t) of the forward SDE dx = f_lin(t) x dt + g(t) dw."""
    ts = _check_times(schedule, ts)
    if schedule.kind == "vp":
        return np.sqrt(beta_arrays(schedule, ts))
    return np.ones_like(ts)


def linear_drift_arrays(schedule: NoiseSchedule, ts: np.ndarray) -> np.ndarray:
    """f_lin(t) with drift f(x, t) = f_lin(t) * x."""
    ts = _check_times(schedule, ts)
    if schedule.kind == "vp":
        return -0.5 * beta_arrays(schedule, ts)
    return np.zeros_like(ts)


def conditional_gaussian_arrays(
    schedule: NoiseSchedule, s: np.ndarray, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Transition x_t | x_s ~ N(alpha_ts x_s, var_ts I) for s <= t.

    Returns (alpha_ts, var_ts) with alpha_ts = alpha_t / alpha_s and
    var_ts = sigma_t^2 - alpha_ts^2 sigma_s^2.
    """
    s = _check_times(schedule, s, "s")
    t = _check_times(schedule, t, "t")
    if np.any(np.broadcast_arrays(s, t)[0] > np.broadcast_arrays(s, t)[1]):
        raise DomainError("conditional transition requires s <= t")
    alpha_s, sigma_s = alpha_sigma_arrays(schedule, s)
    alpha_t, sigma_t = alpha_sigma_arrays(schedule, t)
    ratio = alpha_t / alpha_s
    var = np.maximum(sigma_t * sigma_t - (ratio * ratio) * (sigma_s * sigma_s), 0.0)
    return ratio, var


def conditional_gaussian(schedule: NoiseSchedule, s: float, t: float) -> tuple[float, float]:
    ratio, var = conditional_gaussian_arrays(schedule, np.array([s]), np.array([t]))
    return float(ratio[0]), float(var[0])
