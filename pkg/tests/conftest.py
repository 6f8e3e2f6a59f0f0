"""Shared fixtures and the acceptance summary printed at the end of the run."""

from __future__ import annotations

import pytest

from gge_ions.params import SpinChainParams

# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def default_params() -> SpinChainParams:
    return SpinChainParams(N=6, J_y=1.0, J_z=0.1, h=1.0, epsilon=0.01, gamma=0.5)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
