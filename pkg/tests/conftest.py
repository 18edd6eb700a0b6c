import numpy as np
import pytest

from tracekit.codegen import CodeParams, generate

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)
        _ACCEPTANCE.append((name, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


@pytest.fixture(scope="session")
def small_code():
    return generate(CodeParams(200, 512, "tardos", 11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
