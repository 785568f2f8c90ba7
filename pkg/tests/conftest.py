import numpy as np
import pytest

from qhet import EffectSet
from qhet.smd import sample_g, var_g_conditional

_ACCEPTANCE = []


def make_effects(rng, K=5, n=40, f=0.5, delta=0.5, tau2=0.5):
    """Random effect set drawn from the random-effects model."""
    n = np.broadcast_to(np.asarray(n, dtype=float), (K,))
    n_c = np.round(n * f)
    n_t = n - n_c
    ntilde = n_t * n_c / n
    m = n - 2
    d = rng.normal(delta, np.sqrt(tau2), K)
    g = sample_g(rng, m, ntilde, d, size=K)
    return EffectSet(g, var_g_conditional(g, n_t, n_c), ntilde, m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def effects(rng):
    return make_effects(rng)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE.append(line)
        reporter = request.config.pluginmanager.getplugin("terminalreporter")
        if reporter is not None:
            reporter.write_line(f"\n[acceptance] {line}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
