"""Acceptance bookkeeping: tests marked ``criterion`` get a pass/fail line in the summary."""
import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion checked by this test")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    # a setup failure counts as a failed criterion; otherwise the call phase decides
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        cid, title = mark.args
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        item.config._acceptance[cid] = (title, rep.outcome, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results, key=lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)):
        title, outcome, detail = results[cid]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        line = f"{verdict:4s}  criterion {cid:<3s} {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
