import contextlib

import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Context manager recording one PASS/FAIL line per acceptance criterion.

    ``with criterion(3, "gradient checks") as note:`` runs the block; ``note``
    attaches a detail string. Lines are printed at once and again in the
    terminal summary.
    """

    @contextlib.contextmanager
    def record(number: int, title: str):
        details = []
        try:
            yield details.append
        except BaseException as exc:
            line = f"criterion {number} FAIL  {title}: {exc!s}".splitlines()[0]
            _CRITERIA[number] = line
            print(line)
            raise
        line = f"criterion {number} PASS  {title}" + (f": {'; '.join(details)}" if details else "")
        _CRITERIA[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
