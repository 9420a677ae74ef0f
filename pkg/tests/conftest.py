import pytest

from pinstripe.bloch import diffusivities_integral
from pinstripe.stripe_core import solve_stripe


@pytest.fixture(scope="session")
def profile():
    return solve_stripe(0.2, 1.0, 64)


@pytest.fixture(scope="session")
def diffusivities(profile):
    return diffusivities_integral(profile)


ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    """Store ``(passed, detail)`` for an acceptance criterion; printed in the summary."""
    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
