import numpy as np
import pytest

from marginimpute.model import MrfParams
from marginimpute.table import CategoricalTable, ColumnDomain


def make_domains(cards):
    return [ColumnDomain(f"c{j}", tuple(f"v{a}" for a in range(c))) for j, c in enumerate(cards)]


def random_table(rng, n, cards):
    cells = np.column_stack([rng.integers(0, c, size=n) for c in cards])
    return CategoricalTable(make_domains(cards), cells)


def random_params(rng, cards, scale=1.0, edges=None):
    doms = make_domains(cards)
    p = MrfParams(doms, edges=edges)
    return p.with_theta(scale * rng.normal(size=p.dim))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
