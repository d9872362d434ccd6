import pytest

from esohedge import lattice as lt
from esohedge.model import ESOContract, IntensitySpec, MarketParams, PayoffSpec, standard_grant

# Lines reported by the acceptance module, echoed once at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grant_market():
    return MarketParams(mu=0.15, sigma=0.30, r=0.05)


@pytest.fixture(scope="session")
def grant():
    return standard_grant()


@pytest.fixture(scope="session")
def grant_solved(grant_market, grant):
    lat = lt.build(grant_market, grant, 1000)
    return (
        lat,
        lt.solve_mv(lat, grant_market, grant),
        lt.rn_value(lat, grant_market, grant),
        lt.sr_value(lat, grant_market, grant),
    )


@pytest.fixture(scope="session")
def long_market():
    return MarketParams(mu=0.10, sigma=0.30, r=0.05)


def constant_contract(lam, maturity=20.0, strike=100.0, vesting=0.0, payoff=None):
    return ESOContract(
        maturity=maturity,
        vesting=vesting,
        payoff=payoff or PayoffSpec.call(strike),
        intensity=IntensitySpec.constant(lam),
    )
