"""Shared fixtures plus a human-readable acceptance summary.

Tests in ``test_acceptance.py`` are named ``test_c<NN>_...`` and carry a
one-line docstring describing the criterion; the terminal summary prints one
``criterion NN: PASS/FAIL`` line per such test so a run can be audited at a
glance.
"""

import numpy as np
import pytest

_ACCEPTANCE_ITEMS = {}
_ACCEPTANCE_OUTCOMES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_panel():
    from covcast.data_io import ReturnsPanel

    gen = np.random.default_rng(7)
    values = gen.normal(0.0, 1.0, size=(40, 3))
    dates = [f"2024-01-{d:02d}" if d <= 31 else f"2024-02-{d - 31:02d}" for d in range(1, 41)]
    return ReturnsPanel(dates=dates, assets=["aaa", "bbb", "ccc"], values=values)


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance.py" not in item.nodeid:
            continue
        name = item.name.split("[")[0]
        if not name.startswith("test_c"):
            continue
        try:
            num = int(name[6:8])
        except ValueError:
            continue
        doc = (item.function.__doc__ or "").strip().splitlines()
        desc = doc[0].strip() if doc else name
        _ACCEPTANCE_ITEMS[item.nodeid] = (num, desc)


def pytest_runtest_logreport(report):
    if report.nodeid not in _ACCEPTANCE_ITEMS:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(report.outcome, "FAIL")
        _ACCEPTANCE_OUTCOMES[report.nodeid] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_OUTCOMES:
        return
    lines = []
    for nodeid, outcome in _ACCEPTANCE_OUTCOMES.items():
        num, desc = _ACCEPTANCE_ITEMS[nodeid]
        lines.append((num, f"criterion {num:2d}: {outcome} - {desc}"))
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
