import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tgen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small synthetic corpus shared by trainer and CLI tests."""
    from mcspex.audio import GeneratorConfig, generate_corpus

    root = tmp_path_factory.mktemp("corpus")
    return generate_corpus(root, GeneratorConfig(speakers=3, utts=15, seed=7, duration_s=1.0))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are printed in the terminal summary."""
    def _report(criterion: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
