import numpy as np
import pytest

from fedselect.cost import CostSpec


@pytest.fixture
def quad3():
    return [CostSpec.quadratic(a) for a in (1.0, 2.0, 4.0)]


def random_specs(rng: np.random.Generator, n: int) -> list[CostSpec]:
    """Mixed-family small populations for oracle comparisons."""
    out = []
    for _ in range(n):
        fam = rng.integers(4)
        a, b = rng.uniform(0.5, 40, size=2)
        terms = [((a, 2),), ((0.5 * a, 4),), ((a / 3, 4), (b, 6)), ((b, 2),)][fam]
        out.append(CostSpec(terms))
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
