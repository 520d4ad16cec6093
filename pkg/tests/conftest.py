"""Shared test utilities: finite-difference oracles and tolerance helpers."""

import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * h)
    return grad


def assert_close(actual, expected, rtol, atol=1e-8, label=""):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if not np.allclose(actual, expected, rtol=rtol, atol=atol):
        err = np.abs(actual - expected)
        rel = err / np.maximum(np.abs(expected), atol)
        raise AssertionError(
            f"{label or 'arrays'} differ: max abs err {err.max():.3e}, "
            f"max rel err {rel.max():.3e} (rtol={rtol}, atol={atol})"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
