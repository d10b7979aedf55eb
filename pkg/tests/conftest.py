import numpy as np
import pytest

from idid.data import CELLS, Dataset, cell_table

# Eight rows, two per (t, z) cell. Cell means of d: .5, .5, .5, 1; of y: 2, 2, 3, 5.
D8_ROWS = [
    (0, 0, 0, 2.0),
    (0, 0, 1, 2.0),
    (0, 1, 0, 1.0),
    (0, 1, 1, 3.0),
    (1, 0, 0, 3.0),
    (1, 0, 1, 3.0),
    (1, 1, 1, 4.0),
    (1, 1, 1, 6.0),
]


def make_d8() -> Dataset:
    t, z, d, y = (np.array(c) for c in zip(*D8_ROWS))
    return Dataset(t=t, z=z, d=d, y=y)


def random_dataset(
    rng: np.random.Generator, n: int = 40, p: int = 0, effect: float = 1.5, min_delta_d: float = 0.05
) -> Dataset:
    """Small dataset with every (t, z) cell populated and both d values in each cell.

    Draws are repeated until the exposure double difference is at least
    ``min_delta_d`` in magnitude, so the ratio estimators are well defined.
    """
    while True:
        data = _draw_dataset(rng, n, p, effect)
        if abs(cell_table(data).delta_d) >= min_delta_d:
            return data


def _draw_dataset(rng: np.random.Generator, n: int, p: int, effect: float) -> Dataset:
    t = np.repeat([c[0] for c in CELLS], n // 4)
    z = np.repeat([c[1] for c in CELLS], n // 4)
    t = np.concatenate([t, rng.integers(0, 2, n - len(t))])
    z = np.concatenate([z, rng.integers(0, 2, n - len(z))])
    x = rng.standard_normal((n, p))
    prob = 0.3 + 0.15 * t + 0.1 * z + 0.3 * t * z
    d = (rng.random(n) < prob).astype(int)
    for k, (tt, zz) in enumerate(CELLS):  # force both exposure values in each cell
        idx = np.flatnonzero((t == tt) & (z == zz))
        d[idx[0]], d[idx[1]] = 0, 1
    y = effect * d + t + 0.5 * z + x.sum(axis=1) + rng.standard_normal(n)
    return Dataset(t=t, z=z, d=d, y=y, x=x)


@pytest.fixture
def d8() -> Dataset:
    return make_d8()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
