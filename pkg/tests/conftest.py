from collections import defaultdict

import pytest

_OUTCOMES: dict[int, list] = defaultdict(list)
_TITLES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = mark.args
        _TITLES[number] = title
        details = [v for k, v in item.user_properties if k == "detail"]
        _OUTCOMES[number].append((item.name, rep.passed, "; ".join(details)))


@pytest.fixture
def detail(request):
    """Attach a measured value to the acceptance summary line."""

    def add(text: str) -> None:
        request.node.user_properties.append(("detail", text))
        print(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        cases = _OUTCOMES[number]
        ok = all(passed for _, passed, _ in cases)
        info = " | ".join(d for _, _, d in cases if d)
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {_TITLES[number]}  {info}")
