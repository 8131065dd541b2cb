import pytest

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    k = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        err = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        _CRITERIA[k] = ("FAIL", " | ".join(s for s in (detail, err) if s))
    elif rep.when == "call":
        _CRITERIA[k] = ("PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        status, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {status}  {detail}")
