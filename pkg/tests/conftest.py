import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

FIXTURES = ROOT / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose per-phase outcomes so the acceptance module can print a
    # PASS/FAIL line per criterion
    outcome = yield
    report = outcome.get_result()
    setattr(item, f"rep_{report.when}", report)
