import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from grulsif.estimator import Moments
from grulsif.graph import build_graph

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_edges(rng, n, p=0.5, weighted=True):
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < p:
                edges.append((u, v, float(rng.uniform(0.2, 2.0)) if weighted else 1.0))
    return edges


def random_psd(rng, L, scale=1.0):
    A = rng.standard_normal((L, L + 2))
    return scale * A @ A.T / (L + 2)


def random_problem(rng, N, L, p=0.5):
    """Random graph plus random PSD moments (not tied to any data)."""
    edges = random_edges(rng, N, p)
    g = build_graph(edges, N)
    H = np.stack([random_psd(rng, L) for _ in range(N)])
    Hp = np.stack([random_psd(rng, L) for _ in range(N)])
    hp = rng.uniform(0.1, 1.0, (N, L))
    return g, edges, Moments(H, Hp, hp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- suite-wide checks and acceptance summary -------------------------------

ACCEPTANCE_LINES = []
_DESCENT = {"fits": 0, "worst": -np.inf, "where": None}


@pytest.fixture(autouse=True, scope="session")
def _watch_descent():
    """Record the largest objective increase of every tracked fit in this process."""
    from grulsif import estimator

    original = estimator.FitResult.__init__

    def init(self, model, cycles, objective_trace, converged):
        original(self, model, cycles, objective_trace, converged)
        trace = np.asarray(objective_trace)
        if trace.size:
            _DESCENT["fits"] += 1
            if trace.size > 1:
                worst = float(np.max(np.diff(trace)))
                if worst > _DESCENT["worst"]:
                    _DESCENT["worst"] = worst
                    _DESCENT["where"] = os.environ.get("PYTEST_CURRENT_TEST", "?")

    estimator.FitResult.__init__ = init
    yield
    estimator.FitResult.__init__ = original


def descent_summary():
    ok = _DESCENT["worst"] <= 1e-12
    return ok, (f"{_DESCENT['fits']} tracked fits, largest objective increase "
                f"{_DESCENT['worst']:.3g}" + ("" if ok else f" in {_DESCENT['where']}"))


def pytest_terminal_summary(terminalreporter):
    ok, detail = descent_summary()
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
    terminalreporter.write_line(f"suite-wide monotone descent: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_sessionfinish(session, exitstatus):
    if not descent_summary()[0] and exitstatus == 0:
        session.exitstatus = 1
