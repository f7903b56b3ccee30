import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmo_lab.koper import KoperParams, koper_model
from mmo_lab.sde_core import SolverConfig, integrate_det

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=15, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# return-map parameters of the canard-sector experiments
SECTOR_PARAMS = KoperParams(k=-10.0, lam=-7.6, eps1=0.01, eps2=0.7)
BASE_PARAMS = KoperParams(k=-10.0, lam=-7.0, eps1=0.01, eps2=1.0)


@pytest.fixture(scope="session")
def base_params():
    return BASE_PARAMS


@pytest.fixture(scope="session")
def base_model():
    return koper_model(BASE_PARAMS)


@pytest.fixture(scope="session")
def sector_params():
    return SECTOR_PARAMS


@pytest.fixture(scope="session")
def sector_model():
    return koper_model(SECTOR_PARAMS)


@pytest.fixture(scope="session")
def sector_boundaries(sector_model):
    from mmo_lab.analysis import SectorBoundaries

    return SectorBoundaries().fit(sector_model)


@pytest.fixture(scope="session")
def det_orbit(base_model):
    """Deterministic orbit at lambda=-7 long enough for several MMO periods."""
    cfg = SolverConfig(dt=5e-4, t_max=40.0)
    return integrate_det(base_model, (0.5, -2.1, -8.0), cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report --------------------------------------------------------------
_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Callable ``acceptance(n, ok, detail)`` printing one PASS/FAIL line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: (int(s.split()[1].rstrip(":ab")), s)):
            terminalreporter.write_line(line)
