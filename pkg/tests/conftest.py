import numpy as np
import pytest

from rankaware.data import PairAnnotation
from rankaware.model import RankModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_model():
    return RankModel.init(D=8, H=4, K=2, seed=0, T_default=6)


@pytest.fixture
def toy_videos(rng):
    return {f"v{i}": rng.normal(size=(6, 8)) for i in range(6)}


@pytest.fixture
def chain_pairs():
    # v0 > v1 > ... > v5, adjacent pairs only
    return [PairAnnotation(f"v{i}", f"v{i + 1}") for i in range(5)]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
