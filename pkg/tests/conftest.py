from __future__ import annotations

import json
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"


@pytest.fixture(scope="session")
def frozen() -> dict:
    """Reference values derived by tests/oracles/derive.py."""
    return json.loads((TESTS / "oracles" / "frozen.json").read_text(encoding="utf-8"))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


# criterion number -> list of (passed, detail) from tests/test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def pytest_terminal_summary(terminalreporter) -> None:
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}: " + "; ".join(d for _, d in parts))
