import numpy as np
import pytest

from src.fespace import FESpace
from src.logger import init_logging, reset_logging
from src.mesh import build_structured_square


@pytest.fixture(autouse=True, scope="session")
def _log_to_tmp(tmp_path_factory):
    log_dir = tmp_path_factory.mktemp("logs")
    reset_logging()
    init_logging(str(log_dir), level="WARNING", console=False)
    yield
    reset_logging()


@pytest.fixture(autouse=True)
def _log_dir_env(monkeypatch, tmp_path_factory):
    monkeypatch.setenv("KOLMOGOROV_LOG_DIR", str(tmp_path_factory.getbasetemp() / "cli-logs"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture(scope="session")
def mesh2():
    return build_structured_square(2)


@pytest.fixture(scope="session")
def mesh4():
    return build_structured_square(4)


@pytest.fixture(scope="session")
def mesh8():
    return build_structured_square(8)


@pytest.fixture(scope="session")
def space4_p1(mesh4):
    return FESpace(mesh4, 1)


@pytest.fixture(scope="session")
def space4_p2(mesh4):
    return FESpace(mesh4, 2)


@pytest.fixture(scope="session")
def space4_p3(mesh4):
    return FESpace(mesh4, 3)
