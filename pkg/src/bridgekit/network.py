"""Data-prediction score networks.

Both architectures predict the clean sample: the net outputs a residual
and the prediction is x0_hat = x_t + residual, with the final layer
zero-initialized so a fresh net is the identity on x_t. Scores are
recovered from x0_hat through the kernel algebra, not learned directly.

  mlp     flat vectors; input is concat(x_t, [x_T], time features)
  conv2d  images; x_t and x_T are stacked as channels, downsampled by
          stride-2 convs, upsampled by nearest-neighbour, additive skips,
          time features injected per resolution as a learned per-channel
          shift

Time features are sinusoids with frequencies geometrically spaced in
[1, 1e4] applied to raw t, so schedules with horizon 1 sweep the full
band. All parameters and activations are float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from . import schedules as sched
from .bten import read_bten, write_bten
from .errors import ConfigError, ContractError, DomainError, FormatError
from .rng import RngStream

ARCHS = ("mlp", "conv2d")
ACTIVATIONS = ("silu", "relu")
OBJECTIVES = ("dbsm", "dsm")

TIME_FREQ_LO = 1.0
TIME_FREQ_HI = 1.0e4


@dataclass(frozen=True)
class ScoreNetworkConfig:
    arch: str
    hidden: tuple
    time_embed_dim: int = 16
    activation: str = "silu"
    conditional: bool = True  # feed x_T alongside x_t
    input_dim: int = 0  # mlp: dimension of one view
    image_side: int = 0  # conv2d: square image side

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ConfigError(f"time_embed_dim must be even and >= 2, got {self.time_embed_dim}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden must be non-empty positive widths, got {self.hidden}")
        if self.arch == "mlp":
            if self.input_dim < 1:
                raise ConfigError(f"mlp needs input_dim >= 1, got {self.input_dim}")
        else:
            if len(self.hidden) < 2:
                raise ConfigError("conv2d needs at least two channel counts (stem + one level)")
            levels = len(self.hidden) - 1
            if self.image_side < 2 ** levels or self.image_side % (2 ** levels):
                raise ConfigError(
                    f"image_side {self.image_side} must be a positive multiple of {2 ** levels}"
                )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreNetworkConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def time_features(ts, dim: int) -> np.ndarray:
    """(B, dim) sinusoidal features of raw t, geometric frequency ladder."""
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(np.linspace(math.log(TIME_FREQ_LO), math.log(TIME_FREQ_HI), half))
    ang = ts[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _act(cfg: ScoreNetworkConfig):
    return ag.silu if cfg.activation == "silu" else ag.relu


def init_params(cfg: ScoreNetworkConfig, rng: RngStream) -> dict:
    """Fresh parameter dict; hidden layers He-scaled, final layer zero."""
    p: dict[str, np.ndarray] = {}

    def dense(name, fan_in, fan_out, zero=False):
        if zero:
            p[name + ".w"] = np.zeros((fan_in, fan_out))
        else:
            p[name + ".w"] = rng.normals((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        p[name + ".b"] = np.zeros(fan_out)

    def conv(name, c_in, c_out, zero=False):
        fan_in = c_in * 9
        if zero:
            p[name + ".w"] = np.zeros((c_out, c_in, 3, 3))
        else:
            p[name + ".w"] = rng.normals((c_out, c_in, 3, 3)) * math.sqrt(2.0 / fan_in)
        p[name + ".b"] = np.zeros(c_out)

    E = cfg.time_embed_dim
    if cfg.arch == "mlp":
        views = 2 if cfg.conditional else 1
        width_in = views * cfg.input_dim + E
        widths = (width_in,) + cfg.hidden
        for i in range(len(cfg.hidden)):
            dense(f"fc{i}", widths[i], widths[i + 1])
        dense("out", cfg.hidden[-1], cfg.input_dim, zero=True)
    else:
        chans = cfg.hidden
        conv("stem", 2 if cfg.conditional else 1, chans[0])
        dense("stem_t", E, chans[0])
        for i in range(1, len(chans)):
            conv(f"down{i}", chans[i - 1], chans[i])
            dense(f"down{i}_t", E, chans[i])
        for i in range(len(chans) - 1, 0, -1):
            conv(f"up{i}", chans[i], chans[i - 1])
        conv("head", chans[0], 1, zero=True)
    return p


def param_count(cfg: ScoreNetworkConfig) -> int:
    probe = init_params(cfg, RngStream(0, 0))
    return sum(a.size for a in probe.values())


def _check_params(params: dict, cfg: ScoreNetworkConfig):
    expected = init_params(cfg, RngStream(0, 0))
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ContractError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
    for name, ref in expected.items():
        got = np.asarray(params[name])
        if got.shape != ref.shape:
            raise ContractError(f"parameter {name!r} shape {got.shape}, expected {ref.shape}")


def _inject(h, tv, pv, name):
    proj = ag.add(ag.matmul(tv, pv[name + ".w"]), pv[name + ".b"])
    B, C = proj.value.shape
    return ag.add(h, ag.reshape(proj, (B, C, 1, 1)))


def forward_vars(pv: dict, cfg: ScoreNetworkConfig, x_t: np.ndarray, xT, ts) -> "ag.Var":
    """Prediction graph x0_hat as a Var; pv maps names to Vars."""
    act = _act(cfg)
    ts = np.broadcast_to(np.asarray(ts, dtype=np.float64), (x_t.shape[0],))
    tv = ag.Var(time_features(ts, cfg.time_embed_dim))
    if cfg.conditional:
        if xT is None:
            raise ContractError("conditional network needs x_T")
        if np.shape(xT) != x_t.shape:
            raise ContractError(f"x_T shape {np.shape(xT)} does not match x_t {x_t.shape}")
    elif xT is not None:
        raise ContractError("unconditional network takes no x_T")

    if cfg.arch == "mlp":
        if x_t.ndim != 2 or x_t.shape[1] != cfg.input_dim:
            raise ContractError(f"mlp expects (B, {cfg.input_dim}), got {x_t.shape}")
        pieces = [ag.Var(x_t)]
        if cfg.conditional:
            pieces.append(ag.Var(np.asarray(xT, dtype=np.float64)))
        pieces.append(tv)
        h = ag.concat(pieces, axis=1)
        for i in range(len(cfg.hidden)):
            h = act(ag.add(ag.matmul(h, pv[f"fc{i}.w"]), pv[f"fc{i}.b"]))
        res = ag.add(ag.matmul(h, pv["out.w"]), pv["out.b"])
        return ag.add(ag.Var(x_t), res)

    S = cfg.image_side
    if x_t.ndim != 3 or x_t.shape[1:] != (S, S):
        raise ContractError(f"conv2d expects (B, {S}, {S}), got {x_t.shape}")
    xin = ag.Var(x_t[:, None, :, :])
    if cfg.conditional:
        xin = ag.concat([xin, ag.Var(np.asarray(xT, dtype=np.float64)[:, None, :, :])], axis=1)
    chans = cfg.hidden
    h = act(_inject(ag.conv2d(xin, pv["stem.w"], pv["stem.b"], 1, 1), tv, pv, "stem_t"))
    skips = [h]
    for i in range(1, len(chans)):
        h = ag.conv2d(h, pv[f"down{i}.w"], pv[f"down{i}.b"], 2, 1)
        h = act(_inject(h, tv, pv, f"down{i}_t"))
        if i < len(chans) - 1:
            skips.append(h)
    for i in range(len(chans) - 1, 0, -1):
        h = ag.upsample_nearest2(h)
        h = act(ag.conv2d(h, pv[f"up{i}.w"], pv[f"up{i}.b"], 1, 1))
        h = ag.add(h, skips[i - 1])
    res = ag.conv2d(h, pv["head.w"], pv["head.b"], 1, 1)
    res = ag.reshape(res, x_t.shape)
    return ag.add(ag.Var(x_t), res)


def predict(params: dict, cfg: ScoreNetworkConfig, x_t, xT, ts) -> np.ndarray:
    """x0_hat values without gradient bookkeeping on the parameters."""
    pv = {k: ag.Var(v) for k, v in params.items()}
    return forward_vars(pv, cfg, np.asarray(x_t, dtype=np.float64), xT, ts).value


def _per_sample(arr, ndim):
    arr = np.atleast_1d(np.asarray(arr, dtype=np.float64))
    return arr.reshape((-1,) + (1,) * (ndim - 1))


def score_from_prediction(schedule: sched.NoiseSchedule, x_t, xT, ts, x0_hat) -> np.ndarray:
    """Bridge score implied by a data prediction:
    s = -(x_t - a x_T - b x0_hat) / c^2, elementwise over a batch."""
    x_t = np.asarray(x_t, dtype=np.float64)
    ts = np.broadcast_to(np.asarray(ts, dtype=np.float64), (x_t.shape[0],))
    a, b, c = sched.bridge_coefficient_arrays(schedule, ts)
    c2 = c * c
    if np.any(c2 == 0.0):
        raise DomainError("bridge score undefined where c(t) = 0")
    a, b, c2 = (_per_sample(v, x_t.ndim) for v in (a, b, c2))
    return -(x_t - a * np.asarray(xT, dtype=np.float64) - b * np.asarray(x0_hat, dtype=np.float64)) / c2


def marginal_score_from_prediction(schedule: sched.NoiseSchedule, x_t, ts, x0_hat) -> np.ndarray:
    """Unconditional score: s = -(x_t - alpha x0_hat) / sigma^2."""
    x_t = np.asarray(x_t, dtype=np.float64)
    ts = np.broadcast_to(np.asarray(ts, dtype=np.float64), (x_t.shape[0],))
    alpha, sigma = sched.alpha_sigma_arrays(schedule, ts)
    s2 = sigma * sigma
    if np.any(s2 == 0.0):
        raise DomainError("marginal score undefined where sigma(t) = 0")
    alpha, s2 = _per_sample(alpha, x_t.ndim), _per_sample(s2, x_t.ndim)
    return -(x_t - alpha * np.asarray(x0_hat, dtype=np.float64)) / s2


@dataclass
class Checkpoint:
    params: dict
    net: ScoreNetworkConfig
    schedule: sched.NoiseSchedule
    objective: str
    step: int
    moments: dict | None = None  # {"m1": {...}, "m2": {...}} for resume

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        _check_params(self.params, self.net)

    def predictor(self):
        params, cfg = self.params, self.net

        def fn(x_t, xT, ts):
            return predict(params, cfg, x_t, xT, ts)

        return fn


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "net": ckpt.net.to_dict(),
        "schedule": ckpt.schedule.to_dict(),
        "objective": ckpt.objective,
        "step": ckpt.step,
    }
    tensors: dict[str, np.ndarray] = {
        "__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    }
    for name, arr in ckpt.params.items():
        tensors["param/" + name] = np.asarray(arr, dtype=np.float64)
    if ckpt.moments is not None:
        for slot in ("m1", "m2"):
            for name, arr in ckpt.moments[slot].items():
                tensors[f"{slot}/{name}"] = np.asarray(arr, dtype=np.float64)
    write_bten(path, tensors)


def load_checkpoint(path) -> Checkpoint:
    tensors = read_bten(path)
    if "__meta__" not in tensors:
        raise FormatError(f"{path}: checkpoint lacks a __meta__ entry")
    try:
        meta = json.loads(bytes(tensors["__meta__"]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: checkpoint __meta__ is not valid JSON") from exc
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    m1 = {k[3:]: v for k, v in tensors.items() if k.startswith("m1/")}
    m2 = {k[3:]: v for k, v in tensors.items() if k.startswith("m2/")}
    moments = {"m1": m1, "m2": m2} if m1 or m2 else None
    return Checkpoint(
        params=params,
        net=ScoreNetworkConfig.from_dict(meta["net"]),
        schedule=sched.NoiseSchedule.from_dict(meta["schedule"]),
        objective=meta["objective"],
        step=int(meta["step"]),
        moments=moments,
    )
