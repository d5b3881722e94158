import numpy as np
import pytest
import torch

from sem_tsr.structure import Cell, GridLattice, TableStructure


def random_partition(rng: np.random.Generator, n_rows: int, n_cols: int, span_prob: float = 0.3) -> list[Cell]:
    """Random rectangular partition of an n_rows x n_cols grid."""
    free = np.ones((n_rows, n_cols), dtype=bool)
    cells = []
    for r in range(n_rows):
        for c in range(n_cols):
            if not free[r, c]:
                continue
            r1, c1 = r, c
            if rng.random() < span_prob:
                c1 = min(n_cols - 1, c + int(rng.integers(0, 3)))
                while c1 > c and not free[r, c1]:
                    c1 -= 1
                if not free[r, c:c1 + 1].all():
                    c1 = c
                r1 = min(n_rows - 1, r + int(rng.integers(0, 3)))
                while r1 > r and not free[r:r1 + 1, c:c1 + 1].all():
                    r1 -= 1
            free[r:r1 + 1, c:c1 + 1] = False
            cells.append(Cell(r, r1, c, c1))
    return cells


def random_lattice(rng, n_rows: int, n_cols: int, h: int = 64, w: int = 96) -> GridLattice:
    rows = np.sort(rng.choice(np.arange(4, h - 4), n_rows - 1, replace=False)) if n_rows > 1 else []
    cols = np.sort(rng.choice(np.arange(4, w - 4), n_cols - 1, replace=False)) if n_cols > 1 else []
    return GridLattice(h, w, tuple(float(v) for v in rows), tuple(float(v) for v in cols))


def random_structure(rng, n_rows, n_cols, span_prob=0.3) -> TableStructure:
    lat = random_lattice(rng, n_rows, n_cols)
    cells = random_partition(rng, n_rows, n_cols, span_prob)
    for cell in cells:
        cell.bbox = lat.span_box(*cell.span)
    return TableStructure(lat, cells)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


# one PASS/FAIL line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
