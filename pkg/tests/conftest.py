import mpmath as mp
import pytest

from euler_implosion.params import params_from_R
from euler_implosion.series import compute_sonic_series

# midpoint of the converged bracket at N = 25 (width 5.8e-11), frozen from a shooting run
R25 = "25.421719006330882"


def pytest_configure(config):
    config._criteria = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criteria", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(request, capsys):
    """criterion(tag, ok, detail) records and prints one PASS/FAIL line."""

    def record(tag, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
        request.config._criteria.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


@pytest.fixture(scope="session")
def p25():
    return params_from_R(R25)


@pytest.fixture(scope="session")
def s25(p25):
    return compute_sonic_series(p25, 200)


@pytest.fixture(scope="session")
def profile25():
    from euler_implosion.profile import build_profile

    return build_profile(R25, N=25)


@pytest.fixture(scope="session")
def shoot25():
    from euler_implosion.shoot import find_R_N

    return find_R_N(25)


def close(a, b, rel):
    return abs(a - b) <= rel * max(abs(a), abs(b), mp.mpf(1) if isinstance(a, mp.mpf) else 1.0)
