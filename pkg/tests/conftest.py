import pytest

from vasl._alloc import retain_freed_memory
from vasl.gradcheck import micro_config


def pytest_configure(config):
    retain_freed_memory()


@pytest.fixture
def micro():
    return micro_config(seed=0)
