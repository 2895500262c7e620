import numpy as np
import pytest

from hvae.networks import Dims, init_params
from hvae.oracles import random_tiny_params, tiny_specs

__all__ = ["random_tiny_params", "tiny_specs", "zero_params"]


def zero_params(dims: Dims, width: int = 4):
    p = init_params(dims, tiny_specs(dims, width), seed=0)
    for t in p.blocks.values():
        t.data[...] = 0.0
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, shown after the test run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
