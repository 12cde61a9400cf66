import numpy as np
import pytest

from malt import MlpModel, SeededRng, TrainConfig, train
from malt.data import gen_cluster_dataset

DESK_EPSILON = 0.06  # ~50% of the desk fixture is attackable with a = k - 1
DESK_ITERATIONS = 30


def fd_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def random_linear(rng, k, d, bias=True):
    from malt import LinearModel

    W = rng.standard_normal((k, d))
    b = rng.standard_normal(k) if bias else np.zeros(k)
    return LinearModel(W, b)


@pytest.fixture(scope="session")
def desk():
    """Seeded 10-class MLP trained on 200 clustered points in the unit box."""
    data = gen_cluster_dataset(10, 10, 200, seed=3)
    net = MlpModel.init([10, 32, 10], SeededRng(7))
    net, _ = train(net, data, TrainConfig("ce", 0.5, 300))
    return net, data


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
