from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import ACCEPTANCE_LINES, synthetic_dataset  # noqa: E402

from isim_forge.scdkg import fit_scdkg  # noqa: E402


@pytest.fixture(scope="session")
def synth_ds():
    return synthetic_dataset(1500, seed=0)


@pytest.fixture(scope="session")
def synth_graph(synth_ds):
    return fit_scdkg(synth_ds)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
