import numpy as np
import pytest

from kfields.geometry import OrientedPointCloud


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def sphere_cloud(count, radius=0.4, center=(0.0, 0.0, 0.0), seed=0):
    """Oriented samples of a sphere; normals point outward."""
    r = np.random.default_rng(seed)
    dirs = r.standard_normal((count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return OrientedPointCloud(np.asarray(center) + radius * dirs, dirs)


@pytest.fixture
def small_sphere_cloud():
    return sphere_cloud(80)
