import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA.setdefault(mark.args[0], []).append((item.name, "PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        parts = _CRITERIA[n]
        verdict = "PASS" if all(s == "PASS" for _, s in parts) else "FAIL"
        names = ", ".join(f"{name}={s}" for name, s in parts)
        terminalreporter.write_line(f"criterion {n}: {verdict}  ({names})")
