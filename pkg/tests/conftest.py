import pytest
from hypothesis import settings

# a few properties train small forests; wall-clock deadlines only add flakiness
settings.register_profile("default", deadline=None)
settings.load_profile("default")

_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    key, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or rep.failed:
        prev = _results.get(key)
        passed = rep.passed and (prev is None or prev[1])
        _results[key] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results, key=lambda k: (int(k.rstrip("ab")), k)):
        title, passed, detail = _results[key]
        line = f"criterion {key:<3} {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
