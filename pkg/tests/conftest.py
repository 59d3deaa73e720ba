import numpy as np
import pytest
from hypothesis import settings

from hamplug.config import load_config
from hamplug.plug import PlugGeometry
from hamplug.trap import TrapProfile
from hamplug.volume import VolumeModel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def profile():
    return TrapProfile()


@pytest.fixture(scope="session")
def flat_profile():
    return TrapProfile(a=0.0)


@pytest.fixture(scope="session")
def geom(profile):
    return PlugGeometry(profile)


@pytest.fixture(scope="session")
def model(geom):
    return VolumeModel.default(geom)


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(mod.LINES):
            terminalreporter.write_line(mod.LINES[k])
