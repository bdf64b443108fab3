import numpy as np
import pytest

from hola.potentials import double_well_model, gaussian_model, logcosh_model, logistic_model
from hola.potentials import LogisticDataset

ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    """Record and print one acceptance line."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_logistic(seed=0, n=10, d=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.5).astype(float)
    return logistic_model(LogisticDataset(X, y, prior_scale=1.0))


MODEL_FACTORIES = {
    "gaussian": lambda: gaussian_model([0.5, -1.0], [[2.0, 0.5], [0.5, 1.0]]),
    "double_well_1": lambda: double_well_model(1),
    "double_well_3": lambda: double_well_model(3),
    "logcosh": logcosh_model,
    "logistic": small_logistic,
}


@pytest.fixture(params=sorted(MODEL_FACTORIES))
def any_model(request):
    return MODEL_FACTORIES[request.param]()
