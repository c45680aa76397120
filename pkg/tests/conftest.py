"""Shared fixtures: tiny on-disk dataset and a common toy point cloud."""

import numpy as np
import pytest

from bridgekit import synthdata
from bridgekit.rng import RngStream

# 19 ids give every split at least one sample under the hash split:
# test = {18}, val = {5, 8}, train = the rest.
TINY_N = 19
TINY_SIDE = 16
TINY_SEED = 7


@pytest.fixture(scope="session")
def tiny_phantom_spec():
    return synthdata.PhantomSpec(image_side=TINY_SIDE)


@pytest.fixture(scope="session")
def tiny_lesion_spec():
    # radii shrunk to fit a 16x16 canvas under the default area budget
    return synthdata.LesionSpec(radius_min=2.0, radius_max=3.0)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_phantom_spec, tiny_lesion_spec):
    """Directory holding a generated 19-sample dataset; returns the manifest path."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    return synthdata.build_dataset(out, TINY_N, tiny_phantom_spec, tiny_lesion_spec,
                                   seed=TINY_SEED)


def two_moons(n, rng, noise_sd=0.05):
    """Centered pair of interleaved half circles, the usual 2d testbed."""
    half = n // 2
    a1 = np.pi * rng.uniforms(half)
    a2 = np.pi * rng.uniforms(n - half)
    upper = np.stack([np.cos(a1) - 0.5, np.sin(a1) - 0.25], axis=1)
    lower = np.stack([0.5 - np.cos(a2), 0.25 - np.sin(a2)], axis=1)
    pts = np.concatenate([upper, lower], axis=0)
    return pts + noise_sd * rng.normals(pts.shape)


@pytest.fixture(scope="session")
def moons_points():
    return two_moons(2048, RngStream(1, 0))
