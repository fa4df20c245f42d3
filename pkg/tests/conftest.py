import pytest

_VERDICTS: dict[int, tuple[str, str]] = {}


class Criterion:
    """Context manager that records one acceptance verdict per criterion number."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        _VERDICTS[self.number] = ("PASS" if ok else "FAIL", self.title)
        print(f"[criterion {self.number}] {'PASS' if ok else 'FAIL'}  {self.title}")
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        verdict, title = _VERDICTS[n]
        terminalreporter.write_line(f"{n}. {verdict}  {title}")
