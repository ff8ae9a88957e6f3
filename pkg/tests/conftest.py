import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Print an explicit FAIL line for acceptance criteria (pass lines are
    printed by the tests themselves)."""
    outcome = yield
    report = outcome.get_result()
    if (report.when == "call" and report.failed
            and item.module.__name__ == "test_acceptance"):
        print(f"\n[acceptance] {item.name}: FAIL")
