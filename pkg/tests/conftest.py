import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
MOVIELENS = ROOT / "data" / "ml-100k" / "u.data"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def movielens_path():
    if not MOVIELENS.exists():
        pytest.skip(f"{MOVIELENS} missing; run scripts/fetch_movielens.py")
    return MOVIELENS


@pytest.fixture(scope="session")
def movielens_dataset(movielens_path):
    from navip.data import prepare_dataset

    return prepare_dataset(movielens_path, "movielens_100k", min_degree=10, seed=1)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
