import os

import pytest

# criterion id -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}

PAPER_SCALE_ENV = "NEUROCOARSE_PAPER_SCALE"


def pytest_collection_modifyitems(config, items):
    if os.environ.get(PAPER_SCALE_ENV) == "1":
        return
    skip = pytest.mark.skip(reason=f"paper-scale run; set {PAPER_SCALE_ENV}=1 to enable")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}  {detail}")
