import numpy as np
import pytest

from hdrfringe.simulator import ProjectorModel, SensorModel, builtin_scene, default_cameras, render_stacks

ACCEPTANCE_LINES = []


def forward(i0, alpha, phi, shifts):
    """Noiseless fringe samples ``I0 * (1 + alpha * cos(phi + delta))``."""
    return i0 * (1 + alpha * np.cos(phi + np.asarray(shifts, dtype=float)))


def angle_diff(a, b):
    return np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b))))


@pytest.fixture(scope="session")
def cameras():
    return default_cameras()


@pytest.fixture(scope="session")
def shiny_render(cameras):
    scene = builtin_scene("shiny-disk-on-ramp")
    return render_stacks(scene, ProjectorModel(), SensorModel(sigma=1.0), *cameras, seed=7)


@pytest.fixture(scope="session")
def noiseless_shiny_render(cameras):
    scene = builtin_scene("shiny-disk-on-ramp")
    return render_stacks(scene, ProjectorModel(), SensorModel(sigma=0.0, quantize=False), *cameras, seed=0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
