"""Synthetic paired phantoms: healthy image, lesioned twin, masks, labels.

A phantom is a stack of nested soft-edged ellipses on a flat background.
Ellipse k carries tissue class (k mod K) + 1 whose intensity is drawn
from that class's band; the soft edge interpolates from the band's low
edge up to the drawn value, so noiseless pixels never leave their band
and nearest-centre classification recovers the label map exactly.

A lesion is a disk indicator smoothed by a few steps of discrete heat
diffusion. The smoothed profile thresholded at 0.5 and intersected with
the foreground gives the mask; the intensity shift is applied only where
the mask is set, which makes healthy and pathological images equal off
the mask bit for bit.

Datasets are directories of per-sample BTEN files plus a manifest.csv
with columns id,healthy_path,pathological_path,mask_path,label_path,seed.
The train/val/test split is a stable hash of the id (80/5/15), so it
never depends on generation order or dataset size.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bten import read_bten, write_bten
from .errors import ConfigError, ContractError, DataMismatchError, FormatError
from .rng import RngStream

DEFAULT_BANDS = ((0.18, 0.32), (0.42, 0.56), (0.66, 0.80))
EDGE_FRACTION = 0.15  # soft edge width as a fraction of the ellipse radius
MAX_LESION_TRIES = 100

MANIFEST_COLUMNS = ("id", "healthy_path", "pathological_path", "mask_path", "label_path", "seed")
SPLIT_FRACTIONS = (80, 5, 15)  # train / val / test, hash buckets out of 100


@dataclass(frozen=True)
class PhantomSpec:
    image_side: int = 64
    n_ellipses_min: int = 3
    n_ellipses_max: int = 6
    bands: tuple = DEFAULT_BANDS
    background_level: float = 0.04
    texture_noise_sd: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple((float(lo), float(hi)) for lo, hi in self.bands))
        if self.image_side < 16:
            raise ConfigError(f"image_side must be >= 16, got {self.image_side}")
        if not 1 <= self.n_ellipses_min <= self.n_ellipses_max:
            raise ConfigError(
                f"need 1 <= n_ellipses_min <= n_ellipses_max, got "
                f"{self.n_ellipses_min}..{self.n_ellipses_max}"
            )
        if not self.bands:
            raise ConfigError("at least one intensity band is required")
        prev_hi = self.background_level
        for lo, hi in self.bands:
            if not (0.0 <= lo < hi <= 1.0):
                raise ConfigError(f"band ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")
            if lo <= prev_hi:
                raise ConfigError("bands must be ascending and above the background level")
            prev_hi = hi
        if not 0.0 <= self.background_level < 1.0:
            raise ConfigError(f"background_level must lie in [0, 1), got {self.background_level}")
        if self.texture_noise_sd < 0.0:
            raise ConfigError(f"texture_noise_sd must be >= 0, got {self.texture_noise_sd}")

    @property
    def class_centers(self) -> np.ndarray:
        """Centres used by nearest-centre segmentation: background first."""
        mids = [0.5 * (lo + hi) for lo, hi in self.bands]
        return np.array([self.background_level] + mids)


@dataclass(frozen=True)
class LesionSpec:
    radius_min: float = 3.0
    radius_max: float = 6.0
    diffusion_iterations: int = 8
    intensity_shift: float = 0.35
    max_area_fraction: float = 0.15

    def __post_init__(self):
        if not 1.0 <= self.radius_min <= self.radius_max:
            raise ConfigError(
                f"need 1 <= radius_min <= radius_max, got {self.radius_min}..{self.radius_max}"
            )
        if self.diffusion_iterations < 0:
            raise ConfigError(f"diffusion_iterations must be >= 0, got {self.diffusion_iterations}")
        if self.intensity_shift == 0.0:
            raise ConfigError("intensity_shift must be non-zero; a zero lesion is invisible")
        if not 0.0 < self.max_area_fraction <= 1.0:
            raise ConfigError(f"max_area_fraction must lie in (0, 1], got {self.max_area_fraction}")


@dataclass
class PairedSample:
    healthy: np.ndarray  # float64 (S, S) in [0, 1]
    pathological: np.ndarray  # float64 (S, S) in [0, 1]
    lesion_mask: np.ndarray  # uint8 (S, S)
    label_map: np.ndarray  # int32 (S, S), 0 = background


def generate_phantom(spec: PhantomSpec, rng: RngStream):
    """One phantom: (image, label_map)."""
    S = spec.image_side
    img = np.full((S, S), spec.background_level)
    label = np.zeros((S, S), dtype=np.int32)
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    n_span = spec.n_ellipses_max - spec.n_ellipses_min + 1
    n_ell = spec.n_ellipses_min + int(rng.integers(1, n_span)[0])
    K = len(spec.bands)

    cy = cx = S / 2.0
    ax = ay = 0.0
    theta = 0.0
    for i in range(n_ell):
        u = rng.uniforms(6)
        if i == 0:
            cy = S / 2.0 + (u[0] - 0.5) * S / 8.0
            cx = S / 2.0 + (u[1] - 0.5) * S / 8.0
            ax = (0.24 + 0.12 * u[2]) * S
            ay = (0.24 + 0.12 * u[3]) * S
            theta = u[4] * np.pi
        else:
            scale = 0.55 + 0.23 * u[2]
            wobble = (1.0 - scale) * 0.4 * min(ax, ay)
            cy = cy + (u[0] - 0.5) * 2.0 * wobble
            cx = cx + (u[1] - 0.5) * 2.0 * wobble
            ax, ay = ax * scale, ay * scale
            theta = theta + (u[4] - 0.5) * 0.8
        lo, hi = spec.bands[i % K]
        value = lo + (hi - lo) * u[5]
        ct, st = np.cos(theta), np.sin(theta)
        rel_y, rel_x = yy - cy, xx - cx
        u_ax = (ct * rel_x + st * rel_y) / ax
        v_ax = (-st * rel_x + ct * rel_y) / ay
        rho = np.sqrt(u_ax * u_ax + v_ax * v_ax)
        inside = rho <= 1.0
        w = np.clip((1.0 - rho) / EDGE_FRACTION, 0.0, 1.0)
        img[inside] = lo + (value - lo) * w[inside]
        label[inside] = (i % K) + 1

    if spec.texture_noise_sd > 0.0:
        img = img + spec.texture_noise_sd * rng.normals((S, S))
    return np.clip(img, 0.0, 1.0), label


def _heat_smooth(field: np.ndarray, iterations: int) -> np.ndarray:
    """Explicit heat steps with zero (absorbing) boundary."""
    u = field.copy()
    for _ in range(iterations):
        p = np.pad(u, 1)
        u = 0.5 * u + 0.125 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])
    return u


def apply_lesion(spec: LesionSpec, healthy: np.ndarray, label: np.ndarray,
                 rng: RngStream) -> PairedSample:
    """Place one smoothed-blob lesion inside the foreground.

    Retries placement until the mask area fits max_area_fraction; the
    shift is confined to mask pixels, so off-mask pixels of the two
    images are equal exactly.
    """
    healthy = np.asarray(healthy, dtype=np.float64)
    S = healthy.shape[0]
    if healthy.shape != (S, S) or label.shape != (S, S):
        raise ContractError(f"healthy {healthy.shape} and label {label.shape} must be square and equal")
    fg = np.argwhere(label > 0)
    if fg.shape[0] == 0:
        raise ContractError("label map has no foreground; cannot place a lesion")
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    budget = spec.max_area_fraction * S * S

    for _ in range(MAX_LESION_TRIES):
        pick = int(rng.integers(1, fg.shape[0])[0])
        cy, cx = float(fg[pick, 0]), float(fg[pick, 1])
        radius = spec.radius_min + (spec.radius_max - spec.radius_min) * float(rng.uniforms(1)[0])
        seed_disk = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius).astype(np.float64)
        profile = _heat_smooth(seed_disk, spec.diffusion_iterations)
        mask = (profile >= 0.5) & (label > 0)
        area = int(mask.sum())
        if 1 <= area <= budget:
            pathological = healthy.copy()
            shifted = np.clip(healthy + spec.intensity_shift * profile, 0.0, 1.0)
            pathological[mask] = shifted[mask]
            return PairedSample(
                healthy=healthy,
                pathological=pathological,
                lesion_mask=mask.astype(np.uint8),
                label_map=np.asarray(label, dtype=np.int32),
            )
    raise ContractError(
        f"no admissible lesion placement in {MAX_LESION_TRIES} tries; "
        "check radius range against max_area_fraction"
    )


def generate_paired_sample(phantom: PhantomSpec, lesion: LesionSpec,
                           rng: RngStream) -> PairedSample:
    healthy, label = generate_phantom(phantom, rng)
    return apply_lesion(lesion, healthy, label, rng)


def split_of_id(sample_id: int) -> str:
    """Stable 80/5/15 split by hashing the id; independent of set size."""
    digest = hashlib.sha256(str(int(sample_id)).encode("ascii")).digest()
    bucket = int.from_bytes(digest[:8], "little") % 100
    if bucket < SPLIT_FRACTIONS[0]:
        return "train"
    if bucket < SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]:
        return "val"
    return "test"


def write_pgm(path, img: np.ndarray) -> None:
    """Binary PGM preview of a [0, 1] image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ContractError(f"pgm preview expects a 2d image, got shape {img.shape}")
    b = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + b.tobytes())


def build_dataset(out_dir, n_samples: int, phantom: PhantomSpec, lesion: LesionSpec,
                  seed: int = 0) -> Path:
    """Generate n_samples pairs under out_dir; returns the manifest path.

    Every sample gets its own derived stream, so regenerating any subset
    with the same seed reproduces the same bytes.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    master = RngStream(seed, 0)
    rows = []
    preview = None
    for i in range(n_samples):
        stream = master.derive(i)
        sample = generate_paired_sample(phantom, lesion, stream)
        names = {
            "healthy_path": f"{i:05d}_healthy.bten",
            "pathological_path": f"{i:05d}_pathological.bten",
            "mask_path": f"{i:05d}_mask.bten",
            "label_path": f"{i:05d}_label.bten",
        }
        write_bten(out / names["healthy_path"], {"healthy": sample.healthy})
        write_bten(out / names["pathological_path"], {"pathological": sample.pathological})
        write_bten(out / names["mask_path"], {"mask": sample.lesion_mask})
        write_bten(out / names["label_path"], {"label": sample.label_map})
        rows.append({"id": str(i), **names, "seed": str(stream.stream_id)})
        if preview is None:
            trio = np.concatenate(
                [sample.healthy, sample.pathological, sample.lesion_mask.astype(np.float64)],
                axis=1,
            )
            preview = trio
    write_pgm(out / "preview.pgm", preview)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(MANIFEST_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    return manifest


@dataclass
class Dataset:
    ids: list
    splits: list
    healthy: np.ndarray  # (N, S, S)
    pathological: np.ndarray
    masks: np.ndarray  # (N, S, S) uint8
    labels: np.ndarray  # (N, S, S) int32

    def subset(self, split: str) -> "Dataset":
        keep = [i for i, s in enumerate(self.splits) if s == split]
        return Dataset(
            ids=[self.ids[i] for i in keep],
            splits=[split] * len(keep),
            healthy=self.healthy[keep],
            pathological=self.pathological[keep],
            masks=self.masks[keep],
            labels=self.labels[keep],
        )


def load_dataset(manifest_path) -> Dataset:
    """Load every sample a manifest lists, validating consistency.

    A malformed manifest raises FormatError; manifest rows that disagree
    with the artifacts on disk (missing files, shape drift, non-binary
    masks) raise DataMismatchError.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise FormatError(
                f"{manifest_path}: manifest columns {reader.fieldnames} "
                f"do not match {list(MANIFEST_COLUMNS)}"
            )
        rows = list(reader)
    if not rows:
        raise DataMismatchError(f"{manifest_path}: manifest lists no samples")

    ids, splits = [], []
    healthy, pathological, masks, labels = [], [], [], []
    shape = None
    for row in rows:
        sid = int(row["id"])
        entry = {}
        for role, key in (("healthy", "healthy_path"), ("pathological", "pathological_path"),
                          ("mask", "mask_path"), ("label", "label_path")):
            path = base / row[key]
            if not path.exists():
                raise DataMismatchError(f"{manifest_path}: id {sid} references missing {path.name}")
            tensors = read_bten(path)
            if role not in tensors:
                raise DataMismatchError(f"{path.name}: expected an entry named {role!r}")
            entry[role] = tensors[role]
        if shape is None:
            shape = entry["healthy"].shape
        for role, arr in entry.items():
            if arr.shape != shape:
                raise DataMismatchError(
                    f"id {sid}: {role} shape {arr.shape} differs from {shape}"
                )
        if not np.isin(entry["mask"], (0, 1)).all():
            raise DataMismatchError(f"id {sid}: mask is not binary")
        ids.append(sid)
        splits.append(split_of_id(sid))
        healthy.append(np.asarray(entry["healthy"], dtype=np.float64))
        pathological.append(np.asarray(entry["pathological"], dtype=np.float64))
        masks.append(np.asarray(entry["mask"], dtype=np.uint8))
        labels.append(np.asarray(entry["label"], dtype=np.int32))
    return Dataset(
        ids=ids,
        splits=splits,
        healthy=np.stack(healthy),
        pathological=np.stack(pathological),
        masks=np.stack(masks),
        labels=np.stack(labels),
    )
