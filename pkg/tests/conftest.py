import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from motiontubes import synthetic  # noqa: E402


@pytest.fixture(scope="session")
def single_scene():
    return synthetic.synthesize(synthetic.preset("single"))


@pytest.fixture(scope="session")
def two_scene():
    return synthetic.synthesize(synthetic.preset("two"))


@pytest.fixture(scope="session")
def short_scene():
    """Eight-frame single-object scene for quicker checks."""
    return synthetic.synthesize(synthetic.preset("single", num_frames=8))



_CRITERIA = []


def pytest_collection_finish(session):
    for item in session.items:
        if item.name.startswith("test_criterion_"):
            _CRITERIA.append(int(item.name.split("_")[2]))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        line = module.RESULTS.get(number, f"criterion {number}: FAIL - did not run to completion")
        terminalreporter.write_line(line)
