import pytest

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}
ACCEPTANCE_COUNT = 10


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome and fail the test if it did not hold."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (title, bool(ok), detail)
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        title, ok, detail = ACCEPTANCE.get(n, ("did not complete", False, ""))
        terminalreporter.write_line(
            f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        )
