import numpy as np
import pytest

from fermech.numerics import finite_diff_grad, max_rel_error

GRAD_TOL = 1e-4
GRAD_POINTS = 10


def grad_check(value_fn, grad_fn, sample_fn, points=GRAD_POINTS, seed=0):
    """Worst relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        x = sample_fn(rng)
        worst = max(worst, max_rel_error(grad_fn(x), finite_diff_grad(value_fn, x, 1e-5)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
