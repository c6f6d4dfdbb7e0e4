import pytest

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Record ``(ok, detail)`` pieces per criterion; summarised at the end of the run."""
    return request.config.stash.setdefault(_RESULTS, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(results):
        pieces = results[crit]
        ok = all(p[0] for p in pieces)
        shown = [d for good, d in pieces if not good] or [d for _, d in pieces]
        terminalreporter.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}  {'; '.join(shown)}")
