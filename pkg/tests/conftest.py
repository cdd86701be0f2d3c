import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402
from ppsd.engine import run  # noqa: E402
from ppsd.objective import make_rendezvous  # noqa: E402
from ppsd.topology import five_agent_testbed  # noqa: E402


@pytest.fixture(scope="session")
def testbed():
    return five_agent_testbed()


@pytest.fixture(scope="session")
def rendezvous5():
    return make_rendezvous(5, d=2, seed=0)


@pytest.fixture(scope="session")
def audit_run(testbed, rendezvous5):
    """PPSD run on the testbed with a fixed horizon, kept for shadow replays."""
    return run(testbed, rendezvous5, seed=11, k_max=121, eps=0.0)


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
