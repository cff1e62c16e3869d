from pathlib import Path

import pytest

from magpie_sim.executive import blocksworld_domain
from magpie_sim.gripper import default_gripper

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).parent / "fixtures" / "pddl"
SCENARIOS = ROOT / "src" / "magpie_sim" / "data" / "scenarios"


@pytest.fixture(scope="session")
def domain():
    return blocksworld_domain()


@pytest.fixture(scope="session")
def gripper():
    return default_gripper()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def scenarios_dir():
    return SCENARIOS


# -- acceptance summary: one line per criterion after the run --------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    n = int(name.split("_")[2])
    props = dict(report.user_properties)
    _criteria[n] = (report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    from test_acceptance import TITLES
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcome, detail = _criteria[n]
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {mark}  {TITLES[n]}: {detail}")
