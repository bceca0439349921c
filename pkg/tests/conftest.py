import pytest

_REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT_KEY] = []


@pytest.fixture
def report(request):
    """Record one ``PASS``/``FAIL`` summary line per acceptance criterion."""
    lines = request.config.stash[_REPORT_KEY]

    def _report(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        print(line)
        lines.append((number, line))
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
