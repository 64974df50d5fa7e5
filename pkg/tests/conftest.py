import sys

import numpy as np
import pytest

from cifsdip.model import NetworkConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_net():
    return NetworkConfig(channels_down=(4, 8), channels_up=(4, 8), channels_skip=(2, 2))


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in results:
            passed, detail = results[n]
            terminalreporter.write_line(f"ACCEPTANCE criterion {n}: {'PASS' if passed else 'FAIL'}: {detail}")
        else:
            terminalreporter.write_line(f"ACCEPTANCE criterion {n}: FAIL: not run or errored before scoring")
