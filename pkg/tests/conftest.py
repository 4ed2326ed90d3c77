import numpy as np
import pytest

from softact.geometry import BONE, box_surface, grid_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def rot_z(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def fixed_bar(shape=(2, 1, 1), h=1.0):
    """Grid bar with the x = 0 face tagged as bone."""
    mesh = grid_mesh(shape, h)
    return mesh.tag_nodes(mesh.nodes[:, 0] <= 1e-9, BONE)


def bar_surface(shape=(2, 1, 1), h=1.0, divisions=None):
    hi = np.array(shape, dtype=float) * h
    return box_surface((0.0, 0.0, 0.0), hi, divisions or shape)


def rel_err(a, b, floor=1e-12):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), floor)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
