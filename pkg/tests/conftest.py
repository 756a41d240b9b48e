import pytest

from cmmhsim.experiments import prewarm_kernels


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    # JIT-compile the bulk kernels once so individual tests time only the
    # simulation itself
    prewarm_kernels()
