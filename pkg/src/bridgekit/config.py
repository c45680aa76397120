"""Flat key=value run configuration.

The format is one `key = value` per line, `#` comments, blank lines
ignored. Keys are dotted (schedule.*, net.*, train.*, sample.*, data.*,
eval.*) and must come from the known-key registry; anything else is
rejected with its line number, as are duplicates and malformed lines.
resolve() overlays parsed values on the defaults and render() writes the
fully resolved config back out, which is what commands echo as run.cfg.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .network import ScoreNetworkConfig
from .sampling import SampleConfig
from .schedules import NoiseSchedule
from .synthdata import LesionSpec, PhantomSpec
from .training import TrainConfig


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s: str) -> tuple:
    return tuple(int(p.strip()) for p in s.split(",") if p.strip())


def _parse_bands(s: str) -> tuple:
    """Bands as lo:hi pairs, e.g. 0.18:0.32,0.42:0.56."""
    out = []
    for part in s.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(f"band {part!r} must be lo:hi")
        out.append((float(pieces[0]), float(pieces[1])))
    return tuple(out)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{lo}:{hi}" for lo, hi in value)
        return ",".join(str(v) for v in value)
    return str(value)


# key -> (converter, default)
KNOWN_KEYS = {
    "schedule.kind": (str, "vp"),
    "schedule.horizon": (float, 1.0),
    "schedule.beta_min": (float, 0.1),
    "schedule.beta_max": (float, 20.0),
    "schedule.t_clamp_lo": (float, -1.0),
    "schedule.t_clamp_hi": (float, -1.0),
    "net.arch": (str, "conv2d"),
    "net.hidden": (_parse_int_tuple, (6, 12, 24)),
    "net.time_embed_dim": (int, 16),
    "net.activation": (str, "silu"),
    "net.input_dim": (int, 0),
    "train.objective": (str, "dbsm"),
    "train.total_steps": (int, 1000),
    "train.batch_size": (int, 8),
    "train.learning_rate": (float, 1e-4),
    "train.weighting": (str, "unit_x0_mse"),
    "train.optimizer": (str, "radam"),
    "train.seed": (int, 0),
    "train.checkpoint_every": (int, 0),
    "sample.n_steps": (int, 10),
    "sample.eta": (float, 0.0),
    "sample.seed": (int, 0),
    "sample.strict_deterministic": (_parse_bool, False),
    "sample.grid": (str, "uniform_t"),
    "data.n_samples": (int, 100),
    "data.image_side": (int, 64),
    "data.n_ellipses_min": (int, 3),
    "data.n_ellipses_max": (int, 6),
    "data.bands": (_parse_bands, ((0.18, 0.32), (0.42, 0.56), (0.66, 0.80))),
    "data.background_level": (float, 0.04),
    "data.texture_noise_sd": (float, 0.02),
    "data.lesion_radius_min": (float, 3.0),
    "data.lesion_radius_max": (float, 6.0),
    "data.diffusion_iterations": (int, 8),
    "data.intensity_shift": (float, 0.35),
    "data.max_area_fraction": (float, 0.15),
    "data.seed": (int, 0),
    "eval.smooth_radius": (int, 1),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Raw key -> string values; rejects unknown keys with line numbers."""
    raw: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{ln}: expected key = value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{ln}: empty key")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{ln}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{ln}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve(raw: dict) -> dict:
    """Typed values for every known key: defaults overlaid with raw."""
    out = {}
    for key, (conv, default) in KNOWN_KEYS.items():
        if key in raw:
            try:
                out[key] = conv(raw[key])
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"key {key!r}: cannot parse {raw[key]!r}: {exc}") from exc
        else:
            out[key] = default
    return out


def load_config(path) -> dict:
    return resolve(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))


def default_config() -> dict:
    return resolve({})


def render(cfg: dict) -> str:
    """Resolved config as a parse-stable key = value document."""
    lines = [f"{key} = {_fmt(cfg[key])}" for key in KNOWN_KEYS]
    return "\n".join(lines) + "\n"


def write_run_config(out_dir, cfg: dict) -> Path:
    path = Path(out_dir) / "run.cfg"
    path.write_text(render(cfg), encoding="utf-8")
    return path


def to_schedule(cfg: dict) -> NoiseSchedule:
    return NoiseSchedule(
        kind=cfg["schedule.kind"],
        horizon=cfg["schedule.horizon"],
        beta_min=cfg["schedule.beta_min"],
        beta_max=cfg["schedule.beta_max"],
        t_clamp_lo=cfg["schedule.t_clamp_lo"],
        t_clamp_hi=cfg["schedule.t_clamp_hi"],
    )


def to_net_config(cfg: dict) -> ScoreNetworkConfig:
    return ScoreNetworkConfig(
        arch=cfg["net.arch"],
        hidden=cfg["net.hidden"],
        time_embed_dim=cfg["net.time_embed_dim"],
        activation=cfg["net.activation"],
        conditional=cfg["train.objective"] == "dbsm",
        input_dim=cfg["net.input_dim"],
        image_side=cfg["data.image_side"] if cfg["net.arch"] == "conv2d" else 0,
    )


def to_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        objective=cfg["train.objective"],
        total_steps=cfg["train.total_steps"],
        batch_size=cfg["train.batch_size"],
        learning_rate=cfg["train.learning_rate"],
        weighting=cfg["train.weighting"],
        optimizer=cfg["train.optimizer"],
        seed=cfg["train.seed"],
        checkpoint_every=cfg["train.checkpoint_every"],
    )


def to_sample_config(cfg: dict) -> SampleConfig:
    return SampleConfig(
        n_steps=cfg["sample.n_steps"],
        eta=cfg["sample.eta"],
        seed=cfg["sample.seed"],
        strict_deterministic=cfg["sample.strict_deterministic"],
        grid=cfg["sample.grid"],
    )


def to_phantom_spec(cfg: dict) -> PhantomSpec:
    return PhantomSpec(
        image_side=cfg["data.image_side"],
        n_ellipses_min=cfg["data.n_ellipses_min"],
        n_ellipses_max=cfg["data.n_ellipses_max"],
        bands=cfg["data.bands"],
        background_level=cfg["data.background_level"],
        texture_noise_sd=cfg["data.texture_noise_sd"],
    )


def to_lesion_spec(cfg: dict) -> LesionSpec:
    return LesionSpec(
        radius_min=cfg["data.lesion_radius_min"],
        radius_max=cfg["data.lesion_radius_max"],
        diffusion_iterations=cfg["data.diffusion_iterations"],
        intensity_shift=cfg["data.intensity_shift"],
        max_area_fraction=cfg["data.max_area_fraction"],
    )
