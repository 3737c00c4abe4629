import pytest

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    """Record the verdict of one acceptance criterion for the end-of-run table."""
    def record(name, ok, detail=""):
        verdict = "SKIP" if ok is None else ("PASS" if bool(ok) else "FAIL")
        _ACCEPTANCE[name] = (verdict, detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        verdict, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{verdict}  {name}  {detail}".rstrip())
