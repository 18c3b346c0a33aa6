import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vidpert.objective import AuxModel
from vidpert.surrogate import Surrogate
from vidpert.toydata import make_toy_data

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    make_toy_data(root, seed=0, counts={"pretrain": 24, "qa": 24, "video": 4, "benchmark": 6})
    return root


@pytest.fixture(scope="session")
def frozen_models():
    """Untrained but frozen surrogate and auxiliary model: cheap stand-ins for plumbing tests."""
    s = Surrogate(seed=0)
    s.freeze()
    a = AuxModel(seed=0)
    a.freeze()
    return s, a


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance verdict; the terminal summary prints them all."""

    def record(number, name, passed, detail):
        _CRITERIA[number] = f"criterion {number} {name}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
