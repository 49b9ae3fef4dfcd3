import contextlib

import pytest

_criteria = {}


@pytest.fixture
def criterion():
    """``with criterion(n, name) as notes:`` records pass/fail for the summary."""

    @contextlib.contextmanager
    def record(number, name):
        notes = []
        try:
            yield notes
        except BaseException as exc:
            first = (str(exc).strip().splitlines() or [type(exc).__name__])[0]
            _criteria[number] = (name, False, "; ".join(notes + [first]))
            raise
        _criteria[number] = (name, True, "; ".join(notes))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        name, ok, detail = _criteria[n]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n}: {name}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
