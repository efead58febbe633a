import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
HANOI = ROOT / "src" / "wdsgcn" / "data" / "hanoi.inp"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def hanoi():
    from wdsgcn.inp import read_inp

    return read_inp(HANOI)[1]


@pytest.fixture(scope="session")
def hanoi_path():
    return HANOI


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_support import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
