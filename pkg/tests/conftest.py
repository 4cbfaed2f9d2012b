"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""
import pytest

_LINES: list[str] = []


@pytest.fixture
def detail(request):
    """Call with a short measurement string; it is appended to the criterion line."""
    def put(text: str) -> None:
        request.node.user_properties.append(("detail", text))
    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    info = "; ".join(v for k, v in item.user_properties if k == "detail")
    verdict = "PASS" if rep.passed else "FAIL"
    line = f"criterion {mark.args[0]:>2} {verdict}  {mark.args[1]}"
    if info:
        line += f"  [{info}]"
    _LINES.append(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
