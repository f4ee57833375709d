"""Indoor target-localisation workload.

Rooms hold a grid of RSSI sensors and one gateway each. A target moves along
a waypoint track; honest sensors report the RSSI of the target, malicious
sensors report the RSSI they would see from a fabricated track.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from .core import (
    Block,
    ChainStore,
    DomainError,
    NodeId,
    NodeKind,
    NodeProfile,
    Observation,
    SigningKey,
    keygen,
    seal_block,
    sign_transaction,
)
from .data_trust import TrustParams


class ConfigError(ValueError):
    """Inconsistent scenario or experiment configuration."""


# ---------------------------------------------------------------------------
# Radio model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RssiModel:
    rssi_d0: float = -44.8
    d0: float = 1.0
    alpha: float = 2.0        # in-room pathloss exponent
    alpha_wall: float = 3.5   # exponent when target and sensor are in different regions
    sigma: float = 1.0
    rssi_floor: float = -120.0

    def __post_init__(self):
        if self.d0 <= 0:
            raise ConfigError("d0 must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")


def rssi_at(model: RssiModel, distance: float, rng: random.Random, alpha: Optional[float] = None) -> float:
    """Log-distance path loss with Gaussian shadowing, floored at the
    receiver sensitivity."""
    if distance < 0:
        raise DomainError("distance must be non-negative")
    a = model.alpha if alpha is None else alpha
    d = distance if distance > 0 else model.d0
    value = model.rssi_d0 - 10.0 * a * math.log10(d / model.d0)
    if model.sigma > 0:
        value += rng.gauss(0.0, model.sigma)
    return max(model.rssi_floor, value)


def confidence_of(rssi: float) -> float:
    """Piecewise-linear RSSI confidence; the value jumps from ~0 to the 0.4
    floor at -90 dB, exactly as the piecewise rule is written."""
    if rssi > -50:
        return 1.0
    if rssi < -90:
        return 0.4
    return 9.0 / 4.0 + rssi / 40.0


# ---------------------------------------------------------------------------
# Geometry and topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Room:
    name: str
    x0: float
    y0: float
    width: float
    height: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x0 + self.width and self.y0 <= y <= self.y0 + self.height


@dataclass(frozen=True)
class SensorGrid:
    cols: int = 8
    rows: int = 6
    spacing: float = 5.0
    margin: float = 2.5


@dataclass(frozen=True)
class Track:
    waypoints: tuple  # ((x, y, t), ...)

    def __post_init__(self):
        if len(self.waypoints) < 1:
            raise ConfigError("a track needs at least one waypoint")
        ts = [w[2] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("track timestamps must be strictly increasing")

    @classmethod
    def of(cls, points: Sequence[Sequence[float]]) -> "Track":
        return cls(tuple((float(x), float(y), float(t)) for x, y, t in points))

    @property
    def span(self) -> tuple[float, float]:
        return self.waypoints[0][2], self.waypoints[-1][2]

    def position_at(self, t: float) -> tuple[float, float]:
        t0, t1 = self.span
        if not t0 <= t <= t1:
            raise DomainError(f"time {t} outside track span [{t0}, {t1}]")
        wps = self.waypoints
        for (xa, ya, ta), (xb, yb, tb) in zip(wps, wps[1:]):
            if ta <= t <= tb:
                f = (t - ta) / (tb - ta)
                return xa + f * (xb - xa), ya + f * (yb - ya)
        return wps[-1][0], wps[-1][1]


@dataclass
class SensorNode:
    index: int          # position within its room
    room: str
    x: float
    y: float
    key: SigningKey
    gateway: NodeId

    @property
    def node_id(self) -> NodeId:
        return self.key.node_id


@dataclass
class GatewayNode:
    room: str
    key: SigningKey
    sensors: list = field(default_factory=list)

    @property
    def node_id(self) -> NodeId:
        return self.key.node_id


@dataclass
class Topology:
    rooms: list
    gateways: list
    sensors: list
    neighbors: dict      # NodeId -> frozenset of NodeId

    def room_at(self, x: float, y: float) -> Optional[str]:
        for r in self.rooms:
            if r.contains(x, y):
                return r.name
        return None

    def gateway(self, room: str) -> GatewayNode:
        for g in self.gateways:
            if g.room == room:
                return g
        raise KeyError(room)

    def profiles(self, trust: TrustParams, gateway_rep: float,
                 validators: Sequence[NodeId] = ()) -> list:
        out = []
        for g in self.gateways:
            out.append(NodeProfile(g.node_id, NodeKind.GATEWAY,
                                   frozenset(s.node_id for s in g.sensors), gateway_rep))
        for s in self.sensors:
            out.append(NodeProfile(s.node_id, NodeKind.SENSOR,
                                   self.neighbors[s.node_id] | {s.gateway},
                                   trust.initial_sensor_rep, gateway=s.gateway))
        for v in validators:
            out.append(NodeProfile(v, NodeKind.VALIDATOR))
        return out

    def genesis(self, trust: TrustParams, gateway_rep: float,
                validators: Sequence[NodeId] = (), registrar: Optional[SigningKey] = None) -> ChainStore:
        """Chain whose genesis block registers every node of the network."""
        registrar = registrar or keygen("registrar")[0]
        return ChainStore.genesis(registrar, self.profiles(trust, gateway_rep, validators), trust)


def build_topology(rooms: Sequence[Room], grid: SensorGrid, neighbor_radius: float,
                   key_namespace: str = "net") -> Topology:
    """One gateway per room with a rows x cols sensor grid inside it.

    Neighbours are sensors of the same gateway closer than ``neighbor_radius``.
    """
    if not rooms:
        raise ConfigError("at least one room is required")
    gateways, sensors = [], []
    seen_pos = set()
    for room in rooms:
        gkey, _ = keygen(f"{key_namespace}/gateway/{room.name}")
        gw = GatewayNode(room.name, gkey)
        for i in range(grid.rows * grid.cols):
            r, c = divmod(i, grid.cols)
            x = room.x0 + grid.margin + c * grid.spacing
            y = room.y0 + grid.margin + r * grid.spacing
            if not room.contains(x, y):
                raise ConfigError(f"sensor {i} of {room.name} falls outside the room")
            pos = (round(x, 9), round(y, 9))
            if pos in seen_pos:
                raise ConfigError(f"overlapping sensor position {pos}")
            seen_pos.add(pos)
            skey, _ = keygen(f"{key_namespace}/sensor/{room.name}/{i}")
            s = SensorNode(i, room.name, x, y, skey, gw.node_id)
            gw.sensors.append(s)
            sensors.append(s)
        gateways.append(gw)

    neighbors = {}
    for gw in gateways:
        for s in gw.sensors:
            neighbors[s.node_id] = frozenset(
                o.node_id for o in gw.sensors
                if o is not s and math.hypot(o.x - s.x, o.y - s.y) < neighbor_radius
            )
    return Topology(list(rooms), gateways, sensors, neighbors)


# ---------------------------------------------------------------------------
# Adversaries
# ---------------------------------------------------------------------------

class AdversaryKind(str, Enum):
    HONEST_SENSOR = "honest_sensor"
    MALICIOUS_SENSOR = "malicious_sensor"
    MALICIOUS_GATEWAY = "malicious_gateway"
    LYING_VALIDATOR = "lying_validator"


class Tamper(str, Enum):
    FORGE_TRUST = "forge_trust"
    TAMPER_TX = "tamper_tx"


@dataclass(frozen=True)
class AdversaryProfile:
    kind: AdversaryKind = AdversaryKind.HONEST_SENSOR
    track: Optional[Track] = None
    # "consistent": confidence of the fabricated RSSI; "max": always 1.0
    reported_conf: str = "consistent"
    tamper: Tamper = Tamper.FORGE_TRUST
    n_invalid_per_block: int = 1

    def __post_init__(self):
        if self.kind is AdversaryKind.MALICIOUS_SENSOR and self.track is None:
            raise ConfigError("a malicious sensor needs a fabricated track")
        if self.reported_conf not in ("consistent", "max"):
            raise ConfigError(f"unknown confidence policy {self.reported_conf!r}")
        if self.kind is AdversaryKind.MALICIOUS_GATEWAY and self.n_invalid_per_block < 1:
            raise ConfigError("a malicious gateway tampers at least one transaction")


HONEST = AdversaryProfile()


def _path_alpha(topology: Topology, model: RssiModel, sensor: SensorNode, x: float, y: float) -> float:
    return model.alpha if topology.room_at(x, y) == sensor.room else model.alpha_wall


def emit_observations(
    topology: Topology,
    target: Track,
    adversaries: dict,
    model: RssiModel,
    t: float,
    rng: random.Random,
    sensors: Optional[Sequence[SensorNode]] = None,
) -> list:
    """Signed RSSI reports of every sensor (or of ``sensors``) at time ``t``.

    ``adversaries`` maps sensor ``NodeId`` to an ``AdversaryProfile``; absent
    sensors are honest.
    """
    out = []
    tx, ty = target.position_at(t)
    for s in (topology.sensors if sensors is None else sensors):
        adv = adversaries.get(s.node_id, HONEST)
        if adv.kind is AdversaryKind.MALICIOUS_SENSOR:
            px, py = adv.track.position_at(t)
        else:
            px, py = tx, ty
        alpha = _path_alpha(topology, model, s, px, py)
        rssi = rssi_at(model, math.hypot(px - s.x, py - s.y), rng, alpha)
        conf = confidence_of(rssi)
        if adv.kind is AdversaryKind.MALICIOUS_SENSOR and adv.reported_conf == "max":
            conf = 1.0
        out.append(sign_transaction(s.key, Observation(rssi, s.node_id, t), conf))
    return out


def _flip_low_byte(value: float) -> float:
    raw = bytearray(struct.pack(">d", value))
    raw[-1] ^= 0xFF
    return struct.unpack(">d", bytes(raw))[0]


def apply_gateway_tampering(block: Block, profile: AdversaryProfile, rng: random.Random,
                            key: SigningKey, n_invalid: Optional[int] = None) -> Block:
    """Corrupt ``profile.n_invalid_per_block`` (or ``n_invalid``) transactions
    and re-sign; asking for more than the block holds tampers all of them.

    FORGE_TRUST shifts the trust annotation; TAMPER_TX flips the low-order
    byte of the observed value so the sensor signature no longer verifies
    while the neighbours' evidence is left intact.
    """
    if profile.kind is not AdversaryKind.MALICIOUS_GATEWAY:
        raise DomainError("only a malicious gateway tampers with blocks")
    n = profile.n_invalid_per_block if n_invalid is None else n_invalid
    n = min(n, len(block.transactions))
    if n <= 0:
        return block
    txs = list(block.transactions)
    for i in sorted(rng.sample(range(len(txs)), n)):
        tx = txs[i]
        if profile.tamper is Tamper.FORGE_TRUST:
            forged = (tx.trust or 0.0) + 0.25 + 0.5 * rng.random()
            txs[i] = replace(tx, trust=forged)
        else:
            obs = replace(tx.observation, value=_flip_low_byte(tx.observation.value))
            txs[i] = replace(tx, observation=obs)
    return seal_block(key, block.height, block.prev_hash, txs, block.registrations)


def tampered_indices(original: Block, tampered: Block) -> list:
    return [i for i, (a, b) in enumerate(zip(original.transactions, tampered.transactions)) if a != b]
