import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from derivgp.kernels import cross_cov

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


STENCIL = ((-2, 1.0 / 12), (-1, -8.0 / 12), (1, 8.0 / 12), (2, -1.0 / 12))


def _stencil(x, axes, h):
    """Stencil points and weights for nested five-point differences along ``axes``."""
    pts, wts = [], []
    for combo in itertools.product(STENCIL, repeat=len(axes)):
        u, w = x.copy(), 1.0
        for a, (k, c) in zip(axes, combo):
            u[a] += k * h
            w *= c
        pts.append(u)
        wts.append(w)
    return np.array(pts), np.array(wts)


def _fd(spec, x, x2, rows, cols, h):
    U, wu = _stencil(x, rows, h)
    V, wv = _stencil(x2, cols, h)
    # x and x' are perturbed independently, so one value-block covers the stencil
    return wu @ cross_cov(spec, U, V) @ wv / h ** (len(rows) + len(cols))


def fd_kernel_block(spec, x, x2, rows, cols, h=None):
    """Mixed partial of the kernel value by nested five-point central differences.

    ``rows`` / ``cols`` are tuples of axes differentiated in x and x'.  One
    Richardson step on (h, 2h) cancels the h^4 truncation term; the default
    step grows with the total order to keep round-off (eps / h^n) small.
    """
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if h is None:
        h = 5e-3 if len(rows) + len(cols) <= 2 else 1.5e-2
    return (16.0 * _fd(spec, x, x2, rows, cols, h) - _fd(spec, x, x2, rows, cols, 2 * h)) / 15.0


def fd_gradient(fn, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""
    def emit(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
