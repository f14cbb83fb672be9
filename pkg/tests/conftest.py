import os
import sys

import pytest
from hypothesis import HealthCheck, settings

HERE = os.path.dirname(__file__)
FIXTURES = os.path.join(HERE, "fixtures")
sys.path.insert(0, HERE)

settings.register_profile("bbaudit", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bbaudit")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture
def fixtures_dir() -> str:
    return FIXTURES
