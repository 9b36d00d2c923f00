import numpy as np
import pytest

from cenra.envsuite import resolve_task


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def maze1():
    return resolve_task("maze1")


@pytest.fixture(scope="session")
def suite():
    return [resolve_task(f"maze{i}") for i in range(1, 5)]
