import math
import random

import pytest
from hypothesis import given, strategies as st

from trustchain.consensus import BlockAuditor, generate_block
from trustchain.core import DomainError
from trustchain.data_trust import EvidenceError, TrustParams
from trustchain.scenario import (
    AdversaryKind,
    AdversaryProfile,
    ConfigError,
    Room,
    RssiModel,
    SensorGrid,
    Tamper,
    Track,
    apply_gateway_tampering,
    build_topology,
    confidence_of,
    emit_observations,
    rssi_at,
    tampered_indices,
)

QUIET = RssiModel(sigma=0.0)


def test_rssi_examples():
    rng = random.Random(0)
    assert rssi_at(QUIET, 1.0, rng) == pytest.approx(-44.8)
    assert rssi_at(QUIET, 10.0, rng) == pytest.approx(-64.8)
    assert rssi_at(QUIET, 1e9, rng) == -120.0
    assert rssi_at(QUIET, 0.0, rng) == pytest.approx(-44.8)
    with pytest.raises(DomainError):
        rssi_at(QUIET, -1.0, rng)


@given(st.floats(0.01, 500), st.floats(0.01, 500))
def test_rssi_decreasing_until_floor(d1, d2):
    a, b = sorted((d1, d2))
    ra, rb = rssi_at(QUIET, a, random.Random(0)), rssi_at(QUIET, b, random.Random(0))
    assert ra >= rb
    if a < b and rb > QUIET.rssi_floor:
        assert ra > rb


def test_rssi_noise_reproducible():
    m = RssiModel()
    assert rssi_at(m, 7.0, random.Random(3)) == rssi_at(m, 7.0, random.Random(3))


def test_rssi_model_validation():
    with pytest.raises(ConfigError):
        RssiModel(d0=0)
    with pytest.raises(ConfigError):
        RssiModel(sigma=-1)


def test_confidence_examples():
    assert confidence_of(-40) == 1.0
    assert confidence_of(-100) == 0.4
    assert confidence_of(-70) == pytest.approx(0.5)
    assert confidence_of(-50) == pytest.approx(1.0)
    # the linear branch reaches 0 at -90; the floor applies strictly below
    assert confidence_of(-90) == pytest.approx(0.0)
    assert confidence_of(-90.0001) == 0.4


@given(st.floats(-89.99, -30), st.floats(0, 20))
def test_confidence_weakly_increasing_above_floor(r, dr):
    assert confidence_of(r) <= confidence_of(r + dr) or r + dr > -50
    assert 0.0 <= confidence_of(r) <= 1.0


def test_track_interpolation_and_errors():
    tr = Track.of([(0, 0, 0), (10, 0, 10), (10, 10, 20)])
    assert tr.position_at(5) == (5.0, 0.0)
    assert tr.position_at(15) == (10.0, 5.0)
    assert tr.span == (0.0, 20.0)
    with pytest.raises(DomainError):
        tr.position_at(21)
    with pytest.raises(ConfigError):
        Track.of([(0, 0, 1), (0, 0, 1)])


def three_rooms():
    return [Room(f"ROOM{i + 1}", 40.0 * i, 0.0, 40.0, 30.0) for i in range(3)]


def test_reference_topology_size():
    topo = build_topology(three_rooms(), SensorGrid(), 10.0)
    assert len(topo.gateways) == 3 and len(topo.sensors) == 144
    assert all(len(g.sensors) == 48 for g in topo.gateways)


def test_neighbor_sets_respect_radius_and_gateway():
    topo = build_topology(three_rooms(), SensorGrid(), 10.0)
    pos = {s.node_id: s for s in topo.sensors}
    for s in topo.sensors:
        for n in topo.neighbors[s.node_id]:
            o = pos[n]
            assert o.gateway == s.gateway and o is not s
            assert math.hypot(o.x - s.x, o.y - s.y) < 10.0
    corner = topo.gateways[0].sensors[0]
    # offsets (5,0), (0,5), (5,5); (10,0) and (0,10) sit exactly on the radius
    assert len(topo.neighbors[corner.node_id]) == 3


def test_two_sensors_are_mutual_neighbors():
    topo = build_topology([Room("R", 0, 0, 10, 5)], SensorGrid(cols=2, rows=1, spacing=5.0, margin=2.5), 10.0)
    a, b = topo.sensors
    assert b.node_id in topo.neighbors[a.node_id] and a.node_id in topo.neighbors[b.node_id]


def test_zero_radius_surfaces_evidence_error():
    topo = build_topology([Room("R", 0, 0, 10, 5)], SensorGrid(cols=2, rows=1), 0.0)
    assert all(not n for n in topo.neighbors.values())
    chain = topo.genesis(TrustParams(neighbor_radius=0.0), 3.0)
    txs = emit_observations(topo, Track.of([(5, 2.5, 0)]), {}, QUIET, 0.0, random.Random(0))
    with pytest.raises(EvidenceError):
        generate_block(topo.gateways[0].key, txs, chain)


def test_topology_errors():
    with pytest.raises(ConfigError):
        build_topology([Room("A", 0, 0, 20, 20), Room("B", 0, 0, 20, 20)], SensorGrid(cols=2, rows=2), 10.0)
    with pytest.raises(ConfigError):
        build_topology([Room("A", 0, 0, 5, 5)], SensorGrid(cols=4, rows=4), 10.0)
    with pytest.raises(ConfigError):
        build_topology([], SensorGrid(), 10.0)


def _room1():
    topo = build_topology(three_rooms(), SensorGrid(), 10.0)
    return topo, topo.gateways[0]


def test_emit_with_malicious_sensors():
    topo, gw = _room1()
    target = Track.of([(5, 15, 0), (35, 15, 100)])
    fake = Track.of([(35, 15, 0), (5, 15, 100)])
    bad = {gw.sensors[i].node_id: AdversaryProfile(AdversaryKind.MALICIOUS_SENSOR, fake)
           for i in (2, 5, 9, 14, 16, 20, 27, 31, 33, 38, 42, 45)}
    txs = emit_observations(topo, target, bad, QUIET, 10.0, random.Random(0), sensors=gw.sensors)
    assert len(txs) == 48
    fx, fy = fake.position_at(10.0)
    for s, tx in zip(gw.sensors, txs):
        if s.node_id in bad:
            assert tx.observation.value == pytest.approx(rssi_at(QUIET, math.hypot(fx - s.x, fy - s.y), None))


def test_emit_max_confidence_policy():
    topo, gw = _room1()
    target = Track.of([(5, 15, 0), (35, 15, 100)])
    s = gw.sensors[0]
    adv = {s.node_id: AdversaryProfile(AdversaryKind.MALICIOUS_SENSOR, target, "max")}
    (tx,) = emit_observations(topo, target, adv, QUIET, 50.0, random.Random(0), sensors=[gw.sensors[0]])
    assert tx.confidence == 1.0


def test_emit_is_reproducible():
    topo, gw = _room1()
    target = Track.of([(5, 15, 0), (35, 15, 100)])
    a = emit_observations(topo, target, {}, RssiModel(), 3.0, random.Random(9))
    b = emit_observations(topo, target, {}, RssiModel(), 3.0, random.Random(9))
    assert a == b


def test_through_wall_uses_wall_exponent():
    topo, gw = _room1()
    target = Track.of([(60, 15, 0)])  # inside ROOM2
    s = gw.sensors[0]
    (tx,) = emit_observations(topo, target, {}, QUIET, 0.0, random.Random(0), sensors=[s])
    d = math.hypot(60 - s.x, 15 - s.y)
    assert tx.observation.value == pytest.approx(max(-120.0, -44.8 - 35.0 * math.log10(d)))


def test_adversary_profile_validation():
    with pytest.raises(ConfigError):
        AdversaryProfile(AdversaryKind.MALICIOUS_SENSOR)
    with pytest.raises(ConfigError):
        AdversaryProfile(AdversaryKind.MALICIOUS_GATEWAY, n_invalid_per_block=0)
    with pytest.raises(ConfigError):
        AdversaryProfile(reported_conf="sometimes")


def _honest_block(small_net):
    return generate_block(small_net.gateway.key, small_net.observations(), small_net.chain)


@pytest.mark.parametrize("tamper", list(Tamper))
def test_tampering_exactly_n_detectable(small_net, tamper):
    honest = _honest_block(small_net)
    prof = AdversaryProfile(AdversaryKind.MALICIOUS_GATEWAY, tamper=tamper, n_invalid_per_block=2)
    bad = apply_gateway_tampering(honest, prof, random.Random(0), small_net.gateway.key)
    idx = tampered_indices(honest, bad)
    assert len(idx) == 2
    auditor = BlockAuditor(bad, small_net.chain)
    assert auditor.block_problem() is None
    assert [i for i in range(8) if not auditor.tx_ok(i)] == idx


def test_tampering_caps_and_identity(small_net):
    honest = _honest_block(small_net)
    prof = AdversaryProfile(AdversaryKind.MALICIOUS_GATEWAY, n_invalid_per_block=50)
    bad = apply_gateway_tampering(honest, prof, random.Random(0), small_net.gateway.key)
    assert len(tampered_indices(honest, bad)) == 8
    same = apply_gateway_tampering(honest, prof, random.Random(0), small_net.gateway.key, n_invalid=0)
    assert same is honest
    with pytest.raises(DomainError):
        apply_gateway_tampering(honest, AdversaryProfile(), random.Random(0), small_net.gateway.key)
