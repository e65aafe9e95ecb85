import warnings

import pytest

ACCEPTANCE = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    """Store and print one acceptance verdict; the terminal summary repeats them in order."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield
