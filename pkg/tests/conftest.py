import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def rand_sym(rng, n, size=()):
    size = (size,) if isinstance(size, int) else tuple(size)
    A = rng.normal(size=size + (n, n))
    return (A + np.swapaxes(A, -1, -2)) / 2


def rand_spd(rng, n, size=(), scale=0.5):
    from scipy.linalg import expm
    S = rand_sym(rng, n, size) * scale
    if S.ndim == 2:
        return expm(S)
    return np.stack([expm(s) for s in S.reshape(-1, n, n)]).reshape(S.shape)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
