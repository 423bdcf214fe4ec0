import numpy as np
import pytest

from specguard.numerics import Rng


@pytest.fixture
def rng():
    return Rng(1234)


def central_diff(f, x, h=1e-4):
    """Central finite differences of a scalar function of an ndarray."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / denom
