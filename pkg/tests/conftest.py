"""Shared fixtures: small cameras, corpus meshes and cloud helpers."""

import numpy as np
import pytest

from camera import CameraView, Intrinsics, build_trajectory
from cloud import PointCloud
from config import ReconstructionConfig
from raster import TriangleMesh, synthetic_corpus


def make_cloud(positions, orientations=None, colors=None, steps=0) -> PointCloud:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if orientations is None:
        orientations = np.tile([0.0, 0.0, 1.0], (len(positions), 1))
    if colors is None:
        colors = np.full((len(positions), 3), 0.5)
    return PointCloud(positions, colors, orientations, steps)


def square(z: float = 0.0, size: float = 1.0) -> TriangleMesh:
    h = size / 2.0
    vertices = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    return TriangleMesh(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


@pytest.fixture
def intrinsics():
    return Intrinsics.from_fov(64, fov_deg=50.0)


@pytest.fixture
def front_view(intrinsics):
    return CameraView.orbit(0.0, 0.0, 2.5, intrinsics)


@pytest.fixture(scope="session")
def sphere_mesh():
    return synthetic_corpus("sphere", subdivisions=3)


@pytest.fixture(scope="session")
def tee_mesh():
    return synthetic_corpus("tee")


@pytest.fixture
def small_config():
    return ReconstructionConfig(resolution=96, inpaint_count=2)


@pytest.fixture
def small_trajectory(small_config):
    intrinsics = Intrinsics.from_fov(small_config.resolution, fov_deg=small_config.fov_deg)
    return build_trajectory("zigzag", 60.0, small_config.radius, intrinsics, True,
                            small_config.inpaint_count, small_config.seed)
