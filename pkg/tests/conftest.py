import numpy as np
import pytest

from diffsqa.network import NetworkArch, init_params
from diffsqa.numerics import SeededRng

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def small_params(in_dim=6, hidden=(5, 4), embed_dim=4, seed=0, scale=1.0, bias_scale=0.3):
    params = init_params(NetworkArch(in_dim, hidden, embed_dim), SeededRng(seed))
    rng = SeededRng(seed + 1000)
    weights = [(w * scale, bias_scale * rng.normal(b.size)) for w, b in params.weights]
    return params.copy_with(weights)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture
def params():
    return small_params()
