import pytest
from hypothesis import HealthCheck, settings
from threadpoolctl import threadpool_limits

from widthscale.arch import mlp
from widthscale.data import make_blobs
from widthscale.prune import PruneConfig, iterative_prune

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True, scope="session")
def single_thread_blas():
    # Deterministic mode is the test-suite default.
    with threadpool_limits(limits=1):
        yield


@pytest.fixture(scope="session")
def desk_mlp():
    return mlp()


@pytest.fixture(scope="session")
def blobs():
    return make_blobs()


@pytest.fixture(scope="session")
def desk_trajectory(desk_mlp, blobs):
    return iterative_prune(desk_mlp, blobs, PruneConfig(seed=0))


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    """Append ``(criterion, passed, detail)``; lines are printed in the terminal summary."""
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(config.stash.get(ACCEPTANCE, []))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in lines:
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
