import numpy as np
import pytest

from wgcm.datamodel import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20211101)


@pytest.fixture
def small_ds(rng):
    n = 120
    z = rng.standard_normal((n, 2))
    x = np.sin(z[:, 0]) + 0.3 * rng.standard_normal(n)
    y = z[:, 1] ** 2 + 0.3 * rng.standard_normal(n)
    return Dataset(x=x, y=y, z=z)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(str(v) for v in row) + "\n")
    return path


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str, seconds: float) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({seconds:.1f}s) {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
