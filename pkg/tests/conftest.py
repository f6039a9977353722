import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# Messages raised by the two monotonicity asserts inside the package.
_MONOTONE_MARKERS = ("Lloyd step increased", "coordinate descent cycle increased")
_fired = []


def pytest_runtest_makereport(item, call):
    if call.excinfo is not None and call.excinfo.errisinstance(AssertionError):
        msg = str(call.excinfo.value)
        if any(m in msg for m in _MONOTONE_MARKERS):
            _fired.append(item.nodeid)


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda x: int(x.split()[1])):
            terminalreporter.write_line(line)
    status = "FAIL" if _fired else "PASS"
    terminalreporter.write_line(
        f"suite-wide monotonicity asserts: {status} ({len(_fired)} firing tests)"
    )
    for nodeid in _fired:
        terminalreporter.write_line(f"  fired in {nodeid}")


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name="data.csv"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return _write


_criteria = []


@pytest.fixture
def announce(capsys):
    """Print one PASS/FAIL line for an acceptance criterion, outside capture."""
    def _announce(number, title, ok, detail):
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _criteria.append(line)
        with capsys.disabled():
            print("\n" + line)
    return _announce
