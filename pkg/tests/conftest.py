import time
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    A test that dies before recording still gets a FAIL line.
    """
    recorded = []

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _LINES.append(line)
        recorded.append(line)
        print(line)
        return ok

    yield record
    if not recorded:
        _LINES.append(f"FAIL  {request.node.name}  (raised before a verdict)")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The reference curriculum trained once through the CLI, with wall time."""
    from thinkgrpo.cli import main

    out = tmp_path_factory.mktemp("reference") / "run"
    start = time.perf_counter()
    code = main(["train", "--config", str(ROOT / "configs" / "reference.toml"), "--out", str(out)])
    return out, time.perf_counter() - start, code
