import os

import numpy as np
import pytest

from advrl.agents import DdqnOracle
from advrl.nn_core import DenseNet


def linear_oracle(weight, bias) -> DdqnOracle:
    """DDQN oracle whose online and target Q are both ``weight @ s + bias``."""
    weight = np.atleast_2d(np.asarray(weight, dtype=float))
    net = DenseNet(weight.shape[1], [weight.shape[0]], ["identity"])
    (W, b), = net.unflatten(net.params)
    W[...] = weight
    b[...] = bias
    return DdqnOracle(net, net.copy())


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ADVRL_FULL") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale run; set ADVRL_FULL=1")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def record_acceptance():
    """Record one ``ACCEPTANCE <n> PASS|FAIL`` line, echoed in the terminal summary."""
    def record(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
