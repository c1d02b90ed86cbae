import pytest


@pytest.fixture(scope="session")
def acceptance(pytestconfig):
    return pytestconfig.getoption("acceptance")
