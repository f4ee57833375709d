import random

import pytest
from hypothesis import settings

from trustchain.data_trust import TrustParams
from trustchain.scenario import Room, RssiModel, SensorGrid, Track, build_topology, emit_observations

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# Acceptance results collected by tests/test_acceptance.py, printed at the end.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


class SmallNet:
    """One 20x10 m room with eight sensors on a 5 m grid."""

    def __init__(self, rep=3.0, trust=None):
        self.trust = trust or TrustParams()
        self.room = Room("R", 0.0, 0.0, 20.0, 10.0)
        self.topology = build_topology([self.room], SensorGrid(cols=4, rows=2), self.trust.neighbor_radius,
                                       key_namespace="test")
        self.gateway = self.topology.gateways[0]
        self.chain = self.topology.genesis(self.trust, rep)
        self.target = Track.of([(7.5, 5.0, 0.0), (12.5, 5.0, 100.0)])

    def observations(self, t=0.0, seed=0, adversaries=None):
        return emit_observations(self.topology, self.target, adversaries or {}, RssiModel(), t,
                                 random.Random(seed), sensors=self.gateway.sensors)


@pytest.fixture
def small_net():
    return SmallNet()
