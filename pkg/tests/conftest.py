import numpy as np
import pytest

from mvskel.harness.synth import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def scene():
    """Noiseless single-person scene, 3 cameras, 200 frames."""
    return generate_scene(SceneConfig(n_frames=200, seed=11))


@pytest.fixture(scope="session")
def two_person_scene():
    return generate_scene(SceneConfig(n_frames=80, n_persons=2, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
