import pytest

from stockflow.reference import load_reference

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def bundle():
    return load_reference()


@pytest.fixture(scope="session")
def reference_runs(bundle):
    from stockflow.acceptance import reference_runs as build

    return build(bundle)


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
