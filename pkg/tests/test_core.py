import struct

import pytest
from hypothesis import given, strategies as st

from trustchain.core import (
    GENESIS_PREV_HASH,
    Block,
    ChainIntegrityError,
    ChainStore,
    DomainError,
    NodeKind,
    NodeProfile,
    Observation,
    TxId,
    append_block,
    block_is_well_formed,
    compute_block_hash,
    digest,
    keygen,
    seal_block,
    sign_transaction,
    verify_signature,
    verify_transaction,
)


def test_keygen_is_deterministic_and_injective():
    assert keygen(0)[1] == keygen(0)[1]
    assert keygen(0)[1] != keygen(1)[1]
    assert keygen("a")[1] != keygen(b"a")[1]


@given(st.binary(max_size=64), st.integers(min_value=0))
def test_signature_round_trip_and_bit_flip(msg, bit):
    key, node = keygen(7)
    sig = key.sign(msg)
    assert verify_signature(node, msg, sig)
    if msg:
        i = bit % (8 * len(msg))
        mutated = bytearray(msg)
        mutated[i // 8] ^= 1 << (i % 8)
        assert not verify_signature(node, bytes(mutated), sig)


def test_wrong_key_rejects_signature():
    k0, _ = keygen(0)
    _, n1 = keygen(1)
    assert not verify_signature(n1, b"m", k0.sign(b"m"))


def test_observation_must_be_finite():
    _, node = keygen(0)
    with pytest.raises(DomainError):
        Observation(float("nan"), node, 0.0)
    with pytest.raises(DomainError):
        Observation(float("inf"), node, 0.0)


def _registered_sensor():
    key, node = keygen("sensor")
    gw, gnode = keygen("gw")
    profiles = {
        node: NodeProfile(node, NodeKind.SENSOR, frozenset({gnode}), 0.8, gateway=gnode),
        gnode: NodeProfile(gnode, NodeKind.GATEWAY, frozenset({node}), 3.0),
    }
    return key, node, profiles


def test_sign_transaction_checks_confidence_range():
    key, node, _ = _registered_sensor()
    obs = Observation(-60.0, node, 0.0)
    assert sign_transaction(key, obs, 1.0).trust is None
    with pytest.raises(DomainError):
        sign_transaction(key, obs, 1.5)
    with pytest.raises(DomainError):
        sign_transaction(key, obs, -0.1)


def test_sign_transaction_rejects_foreign_observation():
    key, _, _ = _registered_sensor()
    _, other = keygen("other")
    with pytest.raises(DomainError):
        sign_transaction(key, Observation(-60.0, other, 0.0), 1.0)


def test_verify_transaction_outcomes():
    from dataclasses import replace

    key, node, profiles = _registered_sensor()
    tx = sign_transaction(key, Observation(-60.0, node, 1.0), 0.9)
    assert verify_transaction(tx, profiles)

    tampered = replace(tx, observation=replace(tx.observation, value=-60.000001))
    chk = verify_transaction(tampered, profiles)
    assert not chk and chk.reason == "bad signature"

    stranger, snode = keygen("stranger")
    tx2 = sign_transaction(stranger, Observation(-60.0, snode, 1.0), 0.9)
    chk = verify_transaction(tx2, profiles)
    assert not chk and chk.reason == "unknown identity"


def test_gateway_key_is_not_a_sensor_identity():
    _, _, profiles = _registered_sensor()
    gw, gnode = keygen("gw")
    tx = sign_transaction(gw, Observation(-60.0, gnode, 0.0), 1.0)
    assert verify_transaction(tx, profiles).reason == "unknown identity"


def test_profile_cannot_associate_with_itself():
    _, node = keygen(0)
    with pytest.raises(DomainError):
        NodeProfile(node, NodeKind.SENSOR, frozenset({node}))


def test_sensor_neighbors_exclude_gateway():
    _, node, profiles = _registered_sensor()
    assert profiles[node].neighbors == frozenset()


def _u64(v):
    return struct.pack(">Q", v)


def _lp(b):
    return struct.pack(">I", len(b)) + b


def test_transaction_serialization_layout():
    # independent re-encoding of the documented field order
    key, node, _ = _registered_sensor()
    obs = Observation(-61.25, node, 4.5)
    tx = sign_transaction(key, obs, 0.75)
    expected = (
        struct.pack(">d", -61.25) + _lp(node.public_key) + struct.pack(">d", 4.5)
        + struct.pack(">d", 0.75) + _lp(node.public_key) + _lp(tx.sensor_signature)
        + b"\x00" + b"\x00" + b"\x00"
    )
    assert tx.to_bytes() == expected


def _chain():
    reg, _ = keygen("registrar")
    return reg, ChainStore.genesis(reg, [])


def test_genesis_block_shape():
    _, store = _chain()
    g = store.blocks[0]
    assert g.height == 0 and g.prev_hash == GENESIS_PREV_HASH == bytes(32)
    assert g.transactions == ()
    assert block_is_well_formed(g)


def test_append_block_links_and_errors():
    key, store = _chain()
    b1 = seal_block(key, 1, store.tip_hash, ())
    append_block(store, b1)
    assert store.height == 2 and store.verify_links()

    with pytest.raises(ChainIntegrityError):
        store.append(b1)  # duplicate height
    with pytest.raises(ChainIntegrityError):
        store.append(seal_block(key, 2, b"\x01" * 32, ()))
    with pytest.raises(ChainIntegrityError):
        store.append(seal_block(key, 5, store.tip_hash, ()))


def test_append_rejects_forged_hash():
    key, store = _chain()
    b = seal_block(key, 1, store.tip_hash, ())
    forged = Block(b.height, b.prev_hash, b.transactions, b.generator, b.generator_signature, digest(b"x"))
    with pytest.raises(ChainIntegrityError):
        store.append(forged)
    assert store.height == 1


def test_block_signature_is_checked():
    key, store = _chain()
    other, _ = keygen("other")
    b = seal_block(key, 1, store.tip_hash, ())
    bad = Block(b.height, b.prev_hash, b.transactions, b.generator, other.sign(b.block_hash), b.block_hash)
    assert block_is_well_formed(b)
    assert not block_is_well_formed(bad)


@given(st.integers(min_value=1, max_value=12))
def test_chain_integrity_after_appends(n):
    key, store = _chain()
    for h in range(1, n + 1):
        store.append(seal_block(key, h, store.tip_hash, ()))
    assert store.verify_links()
    for i, b in enumerate(store.blocks):
        assert b.block_hash == compute_block_hash(b.height, b.prev_hash, b.transactions, b.generator,
                                                  b.registrations)
        if i:
            assert b.prev_hash == store.blocks[i - 1].block_hash


def test_tx_id_orders_and_serializes():
    assert TxId(1, 2).to_bytes() == _u64(1) + _u64(2)
    assert str(TxId(3, 4)) == "3:4"


def test_annotation_updates_sensor_profile(small_net):
    from trustchain.consensus import generate_block

    net = small_net
    block = generate_block(net.gateway.key, net.observations(), net.chain)
    net.chain.append(block)
    for tx in block.transactions:
        assert net.chain.reputation(tx.sensor_pk) == tx.sensor_reputation
