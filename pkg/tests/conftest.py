"""
Test configuration and fixtures for Granulite.

This module provides common geometry and scene fixtures for both unit and
integration tests.
"""
import numpy as np
import pytest

from granulite.schemas.config import SceneSpec
from granulite.services import fixtures
from granulite.services.sfm import synth_scene


@pytest.fixture(scope="session")
def icosphere_mesh():
    """Closed sphere mesh with 320 faces."""
    return fixtures.icosphere(2)


@pytest.fixture
def tetrahedron_mesh():
    return fixtures.tetrahedron()


@pytest.fixture
def cube_mesh():
    return fixtures.unit_cube_mesh()


@pytest.fixture(scope="session")
def two_ball_mesh():
    return fixtures.two_ball_mesh(32)


@pytest.fixture(scope="session")
def stockpile_mesh():
    """Analytic ten-ball union surface at grid resolution 64."""
    return fixtures.stockpile_mesh(64)


@pytest.fixture(scope="session")
def scene():
    """Noiseless 5-camera, 50-point scene: (truth, observations)."""
    return synth_scene(SceneSpec(n_cameras=5, n_points=50, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ellipsoid_mesh():
    """Subdivided icosphere stretched to semi-axes (2, 1, 0.5)."""
    return fixtures.ellipsoid_mesh((2.0, 1.0, 0.5), 2)
