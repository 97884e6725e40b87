import numpy as np
import pytest

from lfcal.simulator import PRESETS, add_noise, generate_scene


@pytest.fixture(scope="session")
def desk_scene():
    """Noiseless 5x5 rig, 11 frames, 70 corners."""
    return generate_scene(PRESETS["desk"], seed=0)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(PRESETS["small"], seed=3)


@pytest.fixture(scope="session")
def small_noisy(small_scene):
    truth, obs = small_scene
    return truth, add_noise(obs, 0.5, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation_vector(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0, max_angle)


def perturbed_arrays(truth, rng):
    """A random feasible parameter point near ``truth`` with nonzero distortion and skew."""
    a = truth.to_arrays()
    n, t = len(a["intrinsics"]), len(a["world_r"])
    a["intrinsics"] = a["intrinsics"] * (1 + 0.02 * rng.uniform(-1, 1, (n, 5)))
    a["intrinsics"][:, 2] = rng.uniform(-2, 2, n)
    a["distortion"] = rng.uniform(-1, 1, (n, 4)) * [0.1, 0.02, 0.005, 0.005]
    a["rel_r"][1:] += rng.uniform(-0.02, 0.02, (n - 1, 3))
    a["rel_t"][1:] += rng.uniform(-1, 1, (n - 1, 3))
    a["world_r"] += rng.uniform(-0.05, 0.05, (t, 3))
    a["world_t"] += rng.uniform(-5, 5, (t, 3))
    return a


def column_relative_error(J, N):
    """Max deviation per column, relative to that column's largest finite-difference entry."""
    scale = np.max(np.abs(N), axis=0)
    scale[scale == 0] = 1.0
    return float(np.max(np.abs(J - N) / scale))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
