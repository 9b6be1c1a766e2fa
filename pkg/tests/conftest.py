import pytest

from fsse import crypto

crypto.enable_test_mode()


@pytest.fixture
def rng():
    return crypto.SeededRandom(1234)


@pytest.fixture(autouse=True)
def _clean_counters():
    crypto.ops_reset()
    yield


_verdicts = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else detail
    _verdicts[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        title, status, detail = _verdicts[number]
        line = f"criterion {number:>2} {status}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
