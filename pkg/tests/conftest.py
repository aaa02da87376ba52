import numpy as np
import pytest

from subdiv_iga.fitting import generate_plate, grid_faces
from subdiv_iga.mesh import ControlMesh

ACCEPTANCE_LINES = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    """Remember a criterion outcome for the end-of-run summary and print it."""
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def bumpy_grid(n=6, seed=0, amp=0.2):
    """Open ``n x n`` grid with random heights: a generic non-flat surface."""
    rng = np.random.default_rng(seed)
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    V = np.column_stack([X.ravel(), Y.ravel(), amp * rng.standard_normal(X.size)])
    return ControlMesh(V, grid_faces(n, n))


def cube_mesh():
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                  [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    F = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    return ControlMesh(V, F)


@pytest.fixture
def plate4():
    return generate_plate(4)


@pytest.fixture
def bumpy():
    return bumpy_grid()


@pytest.fixture
def cube():
    return cube_mesh()
