import pytest

import sgain


@pytest.fixture(scope="session")
def chain_scenario():
    return sgain.make_scenario("chain-a")


@pytest.fixture(scope="session")
def chain_gains(chain_scenario):
    return sgain.derive_scenario_gains(chain_scenario)


@pytest.fixture(scope="session")
def chain_operator(chain_gains):
    return sgain.build_gain_operator(chain_gains)


@pytest.fixture(scope="session")
def chain_certified(chain_gains):
    return sgain.certify(chain_gains)


@pytest.fixture(scope="session")
def traffic_scenario():
    return sgain.make_scenario("traffic")


@pytest.fixture(scope="session")
def traffic_gains(traffic_scenario):
    return sgain.derive_scenario_gains(traffic_scenario)


@pytest.fixture(scope="session")
def traffic_certified(traffic_gains):
    return sgain.certify(traffic_gains)


@pytest.fixture(scope="session")
def platoon_scenario():
    return sgain.make_scenario("lure-platoon")


@pytest.fixture(scope="session")
def platoon_gains(platoon_scenario):
    return sgain.derive_scenario_gains(platoon_scenario)
