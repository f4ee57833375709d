"""Domain types shared by every layer: identities, signatures, transactions,
blocks, node profiles and the append-only chain store.

All byte encodings are canonical: fields in declaration order, big-endian
integers, IEEE-754 doubles, and length-prefixed byte strings. Digests and
signatures computed over these encodings are reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Iterable, NamedTuple, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
GENESIS_PREV_HASH = bytes(DIGEST_SIZE)


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class ChainIntegrityError(Exception):
    """A block would break the hash links or height sequence of the chain."""


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------------------
# Canonical encoding helpers
# ---------------------------------------------------------------------------

def _u8(v: int) -> bytes:
    return struct.pack(">B", v)


def _u32(v: int) -> bytes:
    return struct.pack(">I", v)


def _u64(v: int) -> bytes:
    return struct.pack(">Q", v)


def _f64(v: float) -> bytes:
    return struct.pack(">d", v)


def _lp(b: bytes) -> bytes:
    return _u32(len(b)) + b


def _opt_f64(v: Optional[float]) -> bytes:
    return _u8(0) if v is None else _u8(1) + _f64(v)


# ---------------------------------------------------------------------------
# Identities and signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class NodeId:
    """Network identity; equal iff the public keys are byte-equal."""

    public_key: bytes

    def hex(self) -> str:
        return self.public_key.hex()

    def short(self) -> str:
        return self.public_key.hex()[:8]

    def __repr__(self) -> str:
        return f"NodeId({self.short()})"


class SigningKey:
    """Ed25519 signing key. Signatures are deterministic, so simulation
    runs are bit-reproducible."""

    def __init__(self, private: Ed25519PrivateKey):
        self._private = private
        raw = private.public_key().public_bytes_raw()
        self.node_id = NodeId(raw)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)

    def __repr__(self) -> str:
        return f"SigningKey({self.node_id.short()})"


def keygen(seed: int | bytes | str) -> tuple[SigningKey, NodeId]:
    """Derive a key pair deterministically from ``seed``."""
    if isinstance(seed, int):
        material = b"int:" + str(seed).encode()
    elif isinstance(seed, str):
        material = b"str:" + seed.encode()
    else:
        material = b"bytes:" + bytes(seed)
    private = Ed25519PrivateKey.from_private_bytes(digest(b"trustchain-keygen/" + material))
    key = SigningKey(private)
    return key, key.node_id


@lru_cache(maxsize=4096)
def _public_key(raw: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(raw)


def verify_signature(node: NodeId, message: bytes, signature: bytes) -> bool:
    return _verify(node.public_key, message, signature)


# gateway and validators check the very same bytes; the check is pure
@lru_cache(maxsize=1 << 16)
def _verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        _public_key(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# ---------------------------------------------------------------------------
# Transactions and blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    value: float
    sensor: NodeId
    timestamp: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DomainError(f"observation value must be finite, got {self.value}")

    def to_bytes(self) -> bytes:
        return _f64(self.value) + _lp(self.sensor.public_key) + _f64(self.timestamp)


class TxId(NamedTuple):
    height: int
    index: int

    def to_bytes(self) -> bytes:
        return _u64(self.height) + _u64(self.index)

    def __str__(self) -> str:
        return f"{self.height}:{self.index}"


@dataclass(frozen=True)
class Transaction:
    observation: Observation
    confidence: float
    sensor_pk: NodeId
    sensor_signature: bytes
    trust: Optional[float] = None
    sensor_reputation: Optional[float] = None
    tx_id: Optional[TxId] = None

    @property
    def annotated(self) -> bool:
        return self.trust is not None and self.sensor_reputation is not None

    def signed_payload(self) -> bytes:
        return signed_payload(self.observation, self.confidence)

    def to_bytes(self) -> bytes:
        tx_id = _u8(0) if self.tx_id is None else _u8(1) + self.tx_id.to_bytes()
        return (
            self.observation.to_bytes()
            + _f64(self.confidence)
            + _lp(self.sensor_pk.public_key)
            + _lp(self.sensor_signature)
            + _opt_f64(self.trust)
            + _opt_f64(self.sensor_reputation)
            + tx_id
        )


def signed_payload(observation: Observation, confidence: float) -> bytes:
    return observation.to_bytes() + _f64(confidence)


def sign_transaction(key: SigningKey, observation: Observation, confidence: float) -> Transaction:
    if not 0.0 <= confidence <= 1.0:
        raise DomainError(f"confidence must lie in [0, 1], got {confidence}")
    if observation.sensor != key.node_id:
        raise DomainError("observation sensor does not match the signing key")
    sig = key.sign(signed_payload(observation, confidence))
    return Transaction(observation, confidence, key.node_id, sig)


class NodeKind(str, Enum):
    SENSOR = "sensor"
    GATEWAY = "gateway"
    VALIDATOR = "validator"


@dataclass(frozen=True)
class NodeProfile:
    """On-chain registration record.

    For a sensor, ``associations`` holds its gateway and its neighbours; for a
    gateway, its sensors. ``low_conf_run`` counts consecutive low-confidence
    reports and is only meaningful for sensors.
    """

    node: NodeId
    kind: NodeKind
    associations: frozenset = frozenset()
    reputation: float = 0.0
    gateway: Optional[NodeId] = None
    low_conf_run: int = 0

    def __post_init__(self):
        if self.node in self.associations:
            raise DomainError("a node cannot be associated with itself")

    @property
    def neighbors(self) -> frozenset:
        if self.kind is not NodeKind.SENSOR:
            return frozenset()
        return self.associations - {self.gateway}

    def to_bytes(self) -> bytes:
        assoc = sorted(self.associations)
        return (
            _lp(self.node.public_key)
            + _lp(self.kind.value.encode())
            + _u32(len(assoc))
            + b"".join(_lp(a.public_key) for a in assoc)
            + _f64(self.reputation)
            + (_u8(0) if self.gateway is None else _u8(1) + _lp(self.gateway.public_key))
        )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    transactions: tuple
    generator: NodeId
    generator_signature: bytes
    block_hash: bytes
    registrations: tuple = ()

    def __len__(self) -> int:
        return len(self.transactions)

    def tx_index(self, tx_id: TxId) -> Optional[int]:
        if tx_id.height != self.height or not 0 <= tx_id.index < len(self.transactions):
            return None
        return tx_id.index

    def to_bytes(self) -> bytes:
        return block_header_bytes(
            self.height, self.prev_hash, self.transactions, self.generator, self.registrations
        ) + _lp(self.generator_signature) + _lp(self.block_hash)


def block_header_bytes(height, prev_hash, transactions, generator, registrations=()) -> bytes:
    parts = [_u64(height), prev_hash, _u32(len(transactions))]
    parts.extend(_lp(tx.to_bytes()) for tx in transactions)
    parts.append(_lp(generator.public_key))
    if registrations:
        parts.append(_u32(len(registrations)))
        parts.extend(_lp(p.to_bytes()) for p in registrations)
    return b"".join(parts)


def compute_block_hash(height, prev_hash, transactions, generator, registrations=()) -> bytes:
    return digest(block_header_bytes(height, prev_hash, transactions, generator, registrations))


def seal_block(
    key: SigningKey,
    height: int,
    prev_hash: bytes,
    transactions: Iterable[Transaction],
    registrations: Iterable[NodeProfile] = (),
) -> Block:
    """Hash and sign a block as ``key``'s owner."""
    txs = tuple(transactions)
    regs = tuple(registrations)
    h = compute_block_hash(height, prev_hash, txs, key.node_id, regs)
    return Block(height, prev_hash, txs, key.node_id, key.sign(h), h, regs)


def block_is_well_formed(block: Block) -> bool:
    """Hash matches content and the generator signature verifies."""
    expected = compute_block_hash(
        block.height, block.prev_hash, block.transactions, block.generator, block.registrations
    )
    if expected != block.block_hash:
        return False
    return verify_signature(block.generator, block.block_hash, block.generator_signature)


# ---------------------------------------------------------------------------
# Chain store
# ---------------------------------------------------------------------------

@dataclass
class ChainStore:
    """Append-only block list plus the profile table derived from it.

    Single writer: only the simulation event loop mutates a store.
    """

    blocks: list = field(default_factory=list)
    profiles: dict = field(default_factory=dict)
    # Network-wide data-trust parameters fixed at initialisation, so that
    # validators replay the sensor-state rule the gateways used.
    trust_params: object = None

    @classmethod
    def genesis(cls, registrar: SigningKey, profiles: Iterable[NodeProfile],
                trust_params=None) -> "ChainStore":
        regs = tuple(profiles)
        store = cls(trust_params=trust_params)
        store.append(seal_block(registrar, 0, GENESIS_PREV_HASH, (), regs))
        return store

    @property
    def height(self) -> int:
        """Height the next block must carry."""
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_PREV_HASH

    def profile(self, node: NodeId) -> Optional[NodeProfile]:
        return self.profiles.get(node)

    def reputation(self, node: NodeId) -> float:
        return self.profiles[node].reputation

    def set_reputation(self, node: NodeId, value: float) -> None:
        self.profiles[node] = replace(self.profiles[node], reputation=value)

    def append(self, block: Block) -> "ChainStore":
        if block.height != self.height:
            raise ChainIntegrityError(
                f"expected height {self.height}, got {block.height}"
            )
        if block.prev_hash != self.tip_hash:
            raise ChainIntegrityError(f"prev_hash mismatch at height {block.height}")
        if compute_block_hash(
            block.height, block.prev_hash, block.transactions, block.generator, block.registrations
        ) != block.block_hash:
            raise ChainIntegrityError(f"block hash mismatch at height {block.height}")
        self.blocks.append(block)
        for p in block.registrations:
            self.profiles[p.node] = p
        self._apply_annotations(block)
        return self

    def _apply_annotations(self, block: Block) -> None:
        from .data_trust import TrustParams, next_low_conf_run

        params = self.trust_params or TrustParams()
        for tx in block.transactions:
            prof = self.profiles.get(tx.sensor_pk)
            if prof is None or tx.sensor_reputation is None:
                continue
            run = next_low_conf_run(prof.low_conf_run, tx.confidence, params)
            self.profiles[tx.sensor_pk] = replace(
                prof, reputation=tx.sensor_reputation, low_conf_run=run
            )

    def verify_links(self) -> bool:
        prev = GENESIS_PREV_HASH
        for i, b in enumerate(self.blocks):
            if b.height != i or b.prev_hash != prev:
                return False
            if compute_block_hash(b.height, b.prev_hash, b.transactions, b.generator,
                                  b.registrations) != b.block_hash:
                return False
            prev = b.block_hash
        return True


def append_block(store: ChainStore, block: Block) -> ChainStore:
    return store.append(block)


class TxCheck(NamedTuple):
    ok: bool
    reason: str

    def __bool__(self) -> bool:
        return self.ok


def verify_transaction(tx: Transaction, profiles: dict) -> TxCheck:
    """Check the sensor signature and that the key belongs to a registered
    sensor. The result is falsy on failure and carries the reason."""
    prof = profiles.get(tx.sensor_pk)
    if prof is None or prof.kind is not NodeKind.SENSOR:
        return TxCheck(False, "unknown identity")
    if tx.observation.sensor != tx.sensor_pk:
        return TxCheck(False, "sensor mismatch")
    if not verify_signature(tx.sensor_pk, tx.signed_payload(), tx.sensor_signature):
        return TxCheck(False, "bad signature")
    return TxCheck(True, "ok")
