import numpy as np
import pytest

from invbss import generators as gen
from invbss.trajectory import TimeSeries, build_neighborhoods, estimate_velocity

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def separable_toy():
    return gen.make_toy_system(gen.ToySystemSpec(kind="separable_product"), 200_000)


@pytest.fixture(scope="session")
def separable_analysis(separable_toy):
    from invbss.pipeline import analyze_series
    return analyze_series(separable_toy.series)


def random_walk_series(n=2000, channels=2, seed=0, dt=0.01):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.normal(size=(n, channels)), axis=0) * 0.1
    return TimeSeries(dt=dt, samples=x)


@pytest.fixture
def small_index():
    ts = random_walk_series(5000)
    vs = estimate_velocity(ts)
    return vs, build_neighborhoods(vs, cells_per_axis=4, min_count=50)
