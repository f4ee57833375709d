"""Deterministic discrete-event simulation of the two-tier network.

Sensors report to their room gateway; gateways take round-robin turns
producing blocks; every other overlay node validates and votes. All
randomness is derived from the run seed, so a run is a pure function of
``(config, mode, seed)``.

Per block the engine measures

* validation latency: compute time a validator spends on the block,
* blockchain-layer latency: block multicast until the block is decided,
* end-to-end latency: sensor observation until the block is decided.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import logging
import math
import platform
import random
import statistics
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Optional

from . import __version__
from .config import ExperimentConfig, GatewayAttack
from .consensus import (
    BlockAuditor,
    Verdict,
    VerdictKind,
    consensus_round,
    generate_block,
    initial_gateway_reputation,
    make_vote,
    tx_val_count,
    update_gateway_reputation,
    validate_block,
    validate_block_counted,
)
from .core import Block, NodeId, TxId, keygen
from .scenario import (
    AdversaryKind,
    AdversaryProfile,
    ConfigError,
    Tamper,
    Track,
    apply_gateway_tampering,
    build_topology,
    emit_observations,
    tampered_indices,
)

log = logging.getLogger(__name__)


class Mode(str, Enum):
    PROPOSED = "proposed"
    BASELINE = "baseline"


class EventKind(IntEnum):
    TIMER_BLOCK_SLOT = 0
    SENSOR_TX = 1
    BLOCK_MULTICAST = 2
    VOTE = 3


@dataclass(order=True, frozen=True)
class SimEvent:
    at: float
    src: NodeId
    seq: int
    kind: EventKind = field(compare=False)
    dst: Optional[NodeId] = field(compare=False, default=None)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    """Min-heap ordered by (time, source id, per-source sequence)."""

    def __init__(self):
        self._heap: list = []
        self._seq: dict = {}

    def push(self, at: float, kind: EventKind, src: NodeId, dst: Optional[NodeId] = None,
             payload: Any = None) -> SimEvent:
        if at < 0 or math.isnan(at):
            raise ValueError(f"bad event time {at}")
        seq = self._seq.get(src, 0)
        self._seq[src] = seq + 1
        ev = SimEvent(at, src, seq, kind, dst, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)


def derive_seed(*parts) -> int:
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big")


def derived_rng(*parts) -> random.Random:
    return random.Random(derive_seed(*parts))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class BlockRecord:
    slot: int
    height: int
    gateway: str
    t_obs: float
    t_gen: float
    t_decided: float
    validation_latency: float
    blockchain_latency: float
    e2e_latency: float
    tx_total: int
    tx_val: int
    n_validators: int
    tampered: bool
    n_tampered: int
    accepted: bool
    rechecked: int
    rep_before: float
    rep_after: float
    discarded: int


CSV_FIELDS = [f for f in BlockRecord.__dataclass_fields__]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunMetrics:
    mode: str
    seed: int
    blocks: list = field(default_factory=list)
    emitted: int = 0
    discarded: int = 0
    isolated: list = field(default_factory=list)

    @property
    def detection_log(self) -> list:
        return [(b.slot, b.height, b.tampered, not b.accepted) for b in self.blocks]

    @property
    def reputation_trace(self) -> list:
        return [(b.slot, b.gateway, b.rep_after) for b in self.blocks]

    def mean(self, attr: str) -> float:
        vals = [getattr(b, attr) for b in self.blocks]
        return statistics.fmean(vals) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for b in self.blocks:
            w.writerow(_fmt(getattr(b, f)) for f in CSV_FIELDS)
        return buf.getvalue()


def manifest(config: ExperimentConfig, seed: int, **extra) -> dict:
    """Everything needed to re-run an experiment bit-identically."""
    return {
        "package": "trustchain",
        "version": __version__,
        "python": platform.python_version(),
        "seed": seed,
        "config": config.to_dict(),
        **extra,
    }


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

@dataclass
class _Collection:
    slot: int
    gateway: Any
    expected: int
    t_obs: float
    received: list = field(default_factory=list)


@dataclass
class _Pending:
    slot: int
    block: Block
    gateway: Any
    validators: list
    t_obs: float
    t_gen: float
    deadline: float
    auditor: BlockAuditor
    tx_val: int
    n_tampered: int
    discarded: int
    votes: list = field(default_factory=list)
    voters: set = field(default_factory=set)
    validation_times: list = field(default_factory=list)


class Simulation:
    def __init__(self, config: ExperimentConfig, mode: Mode = Mode.PROPOSED, seed: Optional[int] = None,
                 target: Optional[Track] = None):
        self.config = config
        self.mode = Mode(mode)
        self.seed = config.seed if seed is None else seed
        self.proposed = self.mode is Mode.PROPOSED
        sc, net = config.scenario, config.network
        self.policy = config.policy.policy()
        self.t_block = config.policy.t_block_s
        if self.t_block <= 0:
            raise ConfigError("t_block_s must be positive")
        self.latency = config.latency
        self.model = sc.rssi
        self.target = target or Track.of(sc.target_track)
        t0, t1 = self.target.span
        if net.n_blocks and not (t0 <= 0 and (net.n_blocks - 1) * self.t_block <= t1):
            raise ConfigError("the target track must cover every block slot")

        self.topology = build_topology(sc.room_objects(), sc.sensor_grid, config.trust.neighbor_radius)
        rooms = {g.room for g in self.topology.gateways}
        for room in list(sc.malicious_sensors) + list(net.malicious_gateways):
            if room not in rooms:
                raise ConfigError(f"unknown room {room!r}")

        self.validator_keys = [keygen(f"net/validator/{i}")[0] for i in range(net.extra_validators)]
        self.liars = {k.node_id for k in self.validator_keys[: net.lying_validators]}
        rep0 = initial_gateway_reputation(net.initial_gateway_rep, self.policy)
        self.chain = self.topology.genesis(config.trust, rep0, [k.node_id for k in self.validator_keys])

        self.adversaries = {}
        if sc.malicious_sensors:
            fake = Track.of(sc.malicious_track)
            for room, idxs in sc.malicious_sensors.items():
                gw = self.topology.gateway(room)
                for i in idxs:
                    if not 0 <= i < len(gw.sensors):
                        raise ConfigError(f"sensor index {i} out of range in {room}")
                    self.adversaries[gw.sensors[i].node_id] = AdversaryProfile(
                        AdversaryKind.MALICIOUS_SENSOR, fake, sc.malicious_confidence)
        self.attacks: dict = dict(net.malicious_gateways)

        self.queue = EventQueue()
        self.clock = keygen("net/clock")[1]
        self.active = list(self.topology.gateways)
        self.rejections = {g.node_id: 0 for g in self.topology.gateways}
        self.collections: dict = {}
        self.pending: Optional[_Pending] = None
        self.lat_rng = derived_rng(self.seed, "latency")
        self.metrics = RunMetrics(self.mode.value, self.seed)

    # -- helpers --------------------------------------------------------

    def _per_tx_cost(self) -> float:
        c = self.latency.sig_check_s
        return c + self.latency.trust_recompute_s if self.proposed else c

    def _overlay(self) -> list:
        """Overlay node ids: active gateways then extra validators."""
        return [g.node_id for g in self.active] + [k.node_id for k in self.validator_keys]

    def _key_of(self, node: NodeId):
        for g in self.topology.gateways:
            if g.node_id == node:
                return g.key
        for k in self.validator_keys:
            if k.node_id == node:
                return k
        raise KeyError(node)

    # -- event handlers -------------------------------------------------

    def run(self) -> RunMetrics:
        for k in range(self.config.network.n_blocks):
            self.queue.push(k * self.t_block, EventKind.TIMER_BLOCK_SLOT, self.clock, payload=k)
        while self.queue:
            ev = self.queue.pop()
            handler = {
                EventKind.TIMER_BLOCK_SLOT: self._on_slot,
                EventKind.SENSOR_TX: self._on_sensor_tx,
                EventKind.BLOCK_MULTICAST: self._on_block,
                EventKind.VOTE: self._on_vote,
            }[ev.kind]
            handler(ev)
        if self.pending is not None:
            self._decide(self.pending.deadline)
        return self.metrics

    def _on_slot(self, ev: SimEvent) -> None:
        if self.pending is not None:
            self._decide(self.pending.deadline)
        if not self.active:
            return
        k = ev.payload
        gw = self.active[k % len(self.active)]
        rng = derived_rng(self.seed, "obs", k)
        txs = emit_observations(self.topology, self.target, self.adversaries, self.model,
                                ev.at, rng, sensors=gw.sensors)
        self.metrics.emitted += len(txs)
        self.collections[k] = _Collection(k, gw, len(txs), ev.at)
        if not txs:
            self._build_block(self.collections.pop(k), ev.at)
            return
        for tx in txs:
            self.queue.push(ev.at + self.latency.sensor_to_gateway.sample(self.lat_rng),
                            EventKind.SENSOR_TX, tx.sensor_pk, gw.node_id, (k, tx))

    def _on_sensor_tx(self, ev: SimEvent) -> None:
        k, tx = ev.payload
        col = self.collections[k]
        col.received.append(tx)
        if len(col.received) == col.expected:
            del self.collections[k]
            self._build_block(col, ev.at)

    def _build_block(self, col: _Collection, now: float) -> None:
        gw, k = col.gateway, col.slot
        n = len(col.received)
        t_gen = now + n * (self.latency.sig_check_s
                           + (self.latency.trust_recompute_s if self.proposed else 0.0))
        discarded: list = []
        block = generate_block(gw.key, col.received, self.chain, self.config.trust,
                               discarded, with_trust=self.proposed)
        self.metrics.discarded += len(discarded)
        n_tampered = 0
        attack: Optional[GatewayAttack] = self.attacks.get(gw.room)
        if attack is not None and attack.active(k):
            profile = AdversaryProfile(AdversaryKind.MALICIOUS_GATEWAY, tamper=Tamper(attack.tamper),
                                       n_invalid_per_block=attack.n_invalid_per_block)
            honest = block
            block = apply_gateway_tampering(block, profile, derived_rng(self.seed, "tamper", k), gw.key)
            n_tampered = len(tampered_indices(honest, block))

        candidates = [v for v in self._overlay() if v != gw.node_id]
        per_block = self.config.network.validators_per_block
        if per_block is not None and per_block < len(candidates):
            candidates = derived_rng(self.seed, "select", k).sample(candidates, per_block)
        n_val = len(candidates)
        total = len(block.transactions)
        if not total:
            tx_val = 0
        elif self.proposed:
            tx_val = tx_val_count(total, self.chain.reputation(gw.node_id), max(1, n_val), self.policy)
        else:
            tx_val = total
        self.pending = _Pending(
            k, block, gw, candidates, col.t_obs, t_gen, (k + 1) * self.t_block,
            BlockAuditor(block, self.chain, recompute_trust=self.proposed), tx_val, n_tampered,
            len(discarded),
        )
        if not candidates:
            self._decide(t_gen)
            return
        for v in candidates:
            self.queue.push(t_gen + self.latency.overlay_link.sample(self.lat_rng),
                            EventKind.BLOCK_MULTICAST, gw.node_id, v, k)

    def _on_block(self, ev: SimEvent) -> None:
        p = self.pending
        if p is None or p.slot != ev.payload:
            return
        v = ev.dst
        key = self._key_of(v)
        b = p.block
        rng = derived_rng(self.seed, "validate", v.hex(), b.height, p.slot)
        if v in self.liars:
            msgs = []
            for _ in range(self.config.network.lying_flood):
                idx = rng.randrange(len(b.transactions)) if b.transactions else 0
                msgs.append(make_vote(key, b.block_hash,
                                      Verdict(VerdictKind.INVALID_TX, TxId(b.height, idx), "lie")))
            cost = 0.0
        else:
            verdict, checked = validate_block_counted(
                b, self.chain, rng, self.policy, max(1, len(p.validators)), p.auditor, p.tx_val or None)
            cost = checked * self._per_tx_cost()
            p.validation_times.append(cost)
            msgs = [make_vote(key, b.block_hash, verdict)]
        for m in msgs:
            self.queue.push(ev.at + cost + self.latency.overlay_link.sample(self.lat_rng),
                            EventKind.VOTE, v, p.gateway.node_id, (p.slot, m))

    def _on_vote(self, ev: SimEvent) -> None:
        p = self.pending
        slot, msg = ev.payload
        if p is None or p.slot != slot:
            return
        if ev.at > p.deadline:
            log.info("late vote from %s discarded", msg.voter.short())
            return
        p.votes.append(msg)
        p.voters.add(msg.voter)
        if len(p.voters) == len(p.validators):
            self._decide(ev.at)

    def _decide(self, now: float) -> None:
        p, self.pending = self.pending, None
        gw = p.gateway
        outcome = consensus_round(p.block, p.votes, self.chain, p.auditor, eligible=set(p.validators))
        t_decided = now + outcome.rechecked * self._per_tx_cost()
        rep_before = self.chain.reputation(gw.node_id)
        if outcome.accepted:
            self.chain.append(p.block)
            self.rejections[gw.node_id] = 0
        else:
            log.info("block %d from %s rejected; %d transactions dropped",
                     p.slot, gw.room, len(p.block.transactions))
            self.rejections[gw.node_id] += 1
        rep_after = rep_before
        if self.proposed and not self.config.network.freeze_reputation:
            rep_after = update_gateway_reputation(rep_before, outcome.accepted, self.policy)
            self.chain.set_reputation(gw.node_id, rep_after)
        limit = self.config.network.isolation_after
        if limit and self.rejections[gw.node_id] >= limit and gw in self.active:
            log.warning("gateway %s isolated after %d consecutive rejections", gw.room, limit)
            self.active.remove(gw)
            self.metrics.isolated.append((p.slot, gw.room))

        vlat = statistics.fmean(p.validation_times) if p.validation_times else 0.0
        self.metrics.blocks.append(BlockRecord(
            slot=p.slot, height=p.block.height, gateway=gw.room, t_obs=p.t_obs, t_gen=p.t_gen,
            t_decided=t_decided, validation_latency=vlat,
            blockchain_latency=t_decided - p.t_gen, e2e_latency=t_decided - p.t_obs,
            tx_total=len(p.block.transactions), tx_val=p.tx_val, n_validators=len(p.validators),
            tampered=p.n_tampered > 0, n_tampered=p.n_tampered, accepted=outcome.accepted,
            rechecked=outcome.rechecked, rep_before=rep_before, rep_after=rep_after,
            discarded=p.discarded,
        ))


def run(config: ExperimentConfig, mode: Mode = Mode.PROPOSED, seed: Optional[int] = None,
        target: Optional[Track] = None) -> RunMetrics:
    return Simulation(config, mode, seed, target).run()


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

VALID_BEFORE, INVALID, VALID_AFTER = 205, 105, 105


def _patrol_track(duration: float, room_w: float = 40.0, room_h: float = 30.0) -> Track:
    """Slow loop around ROOM1 covering ``duration`` seconds."""
    corners = [(10.0, 10.0), (30.0, 10.0), (30.0, 20.0), (10.0, 20.0)]
    leg = 90.0
    pts, t, i = [], 0.0, 0
    while True:
        x, y = corners[i % 4]
        pts.append((x, y, t))
        if t >= duration:
            break
        t += leg
        i += 1
    return Track.of(pts)


@dataclass
class DetectionTrace:
    n_val: int
    n_invalid_tx: int
    delta_r: float
    seed: int
    metrics: RunMetrics

    @property
    def invalid_blocks(self) -> list:
        return [b for b in self.metrics.blocks if b.tampered]

    @property
    def detected(self) -> int:
        return sum(1 for b in self.invalid_blocks if not b.accepted)

    @property
    def missed(self) -> int:
        return sum(1 for b in self.invalid_blocks if b.accepted)

    @property
    def false_rejections(self) -> int:
        return sum(1 for b in self.metrics.blocks if not b.tampered and not b.accepted)

    def reputation(self) -> list:
        return [b.rep_after for b in self.metrics.blocks]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", "invalid", "n_invalid_tx", "tx_val", "rejected", "rep_after"])
        for b in self.metrics.blocks:
            w.writerow([b.slot, _fmt(b.tampered), b.n_tampered, b.tx_val,
                        _fmt(not b.accepted), _fmt(b.rep_after)])
        return buf.getvalue()


def invalid_block_config(base: ExperimentConfig, n_val: int, n_invalid_tx: int, delta_r: float,
                         tamper: str = "forge_trust") -> ExperimentConfig:
    """One honest-sensor room whose gateway turns malicious for the middle
    stretch of blocks, validated by ``n_val`` other overlay nodes."""
    first = base.scenario.rooms[0]
    n_blocks = VALID_BEFORE + INVALID + VALID_AFTER
    return base.with_overrides(
        scenario={"rooms": [first], "malicious_sensors": {}},
        policy={"delta_r": delta_r},
        network={
            "n_blocks": n_blocks,
            "extra_validators": n_val,
            "validators_per_block": None,
            "initial_gateway_rep": 3.0,
            "freeze_reputation": False,
            "isolation_after": 0,
            "lying_validators": 0,
            "malicious_gateways": {first["name"]: {
                "tamper": tamper, "n_invalid_per_block": n_invalid_tx,
                "from_block": VALID_BEFORE, "to_block": VALID_BEFORE + INVALID,
            }},
        },
    )


def invalid_block_experiment(n_val: int, n_invalid_tx: int, delta_r: float = 0.01, seed: int = 0,
                             base: Optional[ExperimentConfig] = None,
                             tamper: str = "forge_trust") -> DetectionTrace:
    """205 valid, 105 invalid, then 105 valid blocks from a gateway starting at
    reputation 3. Isolation is off so the gateway keeps producing blocks."""
    cfg = invalid_block_config(base or ExperimentConfig(), n_val, n_invalid_tx, delta_r, tamper)
    n_blocks = cfg.network.n_blocks
    target = _patrol_track((n_blocks - 1) * cfg.policy.t_block_s)
    metrics = run(cfg, Mode.PROPOSED, seed, target)
    return DetectionTrace(n_val, n_invalid_tx, delta_r, seed, metrics)


@dataclass
class DelayRow:
    mode: str
    gateway_rep: Optional[float]
    validation_latency: float
    blockchain_latency: float
    e2e_latency: float
    tx_val: float


@dataclass
class DelayTable:
    rows: list
    n_val: int

    def row(self, mode: str) -> DelayRow:
        return next(r for r in self.rows if r.mode == mode)

    @property
    def e2e_overhead(self) -> float:
        """Relative end-to-end overhead of low-reputation Proposed over Baseline."""
        base = self.row("baseline").e2e_latency
        return (self.row("proposed_low_rep").e2e_latency - base) / base

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "gateway_rep", "validation_latency_s", "blockchain_latency_s",
                    "e2e_latency_s", "mean_tx_val", "e2e_overhead_vs_baseline"])
        base = self.row("baseline").e2e_latency
        for r in self.rows:
            w.writerow([r.mode, "" if r.gateway_rep is None else _fmt(r.gateway_rep),
                        _fmt(r.validation_latency), _fmt(r.blockchain_latency),
                        _fmt(r.e2e_latency), _fmt(r.tx_val), _fmt((r.e2e_latency - base) / base)])
        return buf.getvalue()


def delay_experiment(config: ExperimentConfig, seed: Optional[int] = None, n_val: int = 10) -> DelayTable:
    """Mean latencies of Proposed at minimum and maximum gateway reputation
    (held fixed) and of Baseline, on identical topology and latency model."""
    seed = config.seed if seed is None else seed
    n_gw = len(config.scenario.rooms)
    extra = n_val - (n_gw - 1)
    if extra < 0:
        raise ConfigError(f"n_val={n_val} is smaller than the other gateways alone")
    pol = config.policy
    rows = []
    for name, mode, rep in (("proposed_low_rep", Mode.PROPOSED, pol.rep_min),
                            ("proposed_high_rep", Mode.PROPOSED, pol.rep_max),
                            ("baseline", Mode.BASELINE, None)):
        cfg = config.with_overrides(network={
            "extra_validators": extra, "validators_per_block": None, "freeze_reputation": True,
            "initial_gateway_rep": rep if rep is not None else config.network.initial_gateway_rep,
            "malicious_gateways": {}, "lying_validators": 0,
        })
        m = run(cfg, mode, seed)
        rows.append(DelayRow(name, rep, m.mean("validation_latency"), m.mean("blockchain_latency"),
                             m.mean("e2e_latency"), m.mean("tx_val")))
    return DelayTable(rows, n_val)


# ---------------------------------------------------------------------------
# Data-layer localisation run
# ---------------------------------------------------------------------------

@dataclass
class LocalizationRow:
    block: int
    t: float
    sensor: int
    malicious: bool
    rssi: float
    confidence: float
    trust: float
    sensor_reputation: float


@dataclass
class LocalizationTrace:
    rows: list
    diverged: list          # per block: tracks at least divergence_min_m apart

    def block_means(self) -> list:
        """(block, diverged, mean honest trust, mean malicious trust)."""
        out = []
        by_block: dict = {}
        for r in self.rows:
            by_block.setdefault(r.block, []).append(r)
        for k, rows in sorted(by_block.items()):
            h = [r.trust for r in rows if not r.malicious]
            m = [r.trust for r in rows if r.malicious]
            out.append((k, self.diverged[k], statistics.fmean(h) if h else math.nan,
                        statistics.fmean(m) if m else math.nan))
        return out

    def separation_rate(self) -> float:
        """Share of diverged blocks where malicious mean trust < honest mean trust."""
        hits = [m < h for k, d, h, m in self.block_means() if d]
        return sum(hits) / len(hits) if hits else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(LocalizationRow.__dataclass_fields__)
        w.writerow(names)
        for r in self.rows:
            w.writerow(_fmt(getattr(r, n)) for n in names)
        return buf.getvalue()


def localization_run(config: ExperimentConfig, seed: Optional[int] = None, room: str = "ROOM1") -> LocalizationTrace:
    """Gateway-side trust assignment for one room over the target track,
    one block per slot; no validation layer involved."""
    seed = config.seed if seed is None else seed
    sc = config.scenario
    topo = build_topology(sc.room_objects(), sc.sensor_grid, config.trust.neighbor_radius)
    gw = topo.gateway(room)
    target, fake = Track.of(sc.target_track), Track.of(sc.malicious_track)
    bad = set(sc.malicious_sensors.get(room, ()))
    adversaries = {
        s.node_id: AdversaryProfile(AdversaryKind.MALICIOUS_SENSOR, fake, sc.malicious_confidence)
        for s in gw.sensors if s.index in bad
    }
    policy = config.policy.policy()
    chain = topo.genesis(config.trust, initial_gateway_reputation(config.network.initial_gateway_rep, policy))
    t0, t1 = target.span
    rows, diverged = [], []
    k = 0
    while t0 + k * config.policy.t_block_s <= t1 + 1e-9:
        t = t0 + k * config.policy.t_block_s
        rng = derived_rng(seed, "obs", k)
        txs = emit_observations(topo, target, adversaries, sc.rssi, t, rng, sensors=gw.sensors)
        block = generate_block(gw.key, txs, chain, config.trust)
        chain.append(block)
        index = {s.node_id: s.index for s in gw.sensors}
        for tx in block.transactions:
            i = index[tx.sensor_pk]
            rows.append(LocalizationRow(k, t, i, i in bad, tx.observation.value, tx.confidence,
                                        tx.trust, tx.sensor_reputation))
        (ax, ay), (bx, by) = target.position_at(t), fake.position_at(min(max(t, fake.span[0]), fake.span[1]))
        diverged.append(math.hypot(ax - bx, ay - by) >= sc.divergence_min_m)
        k += 1
    return LocalizationTrace(rows, diverged)


# ---------------------------------------------------------------------------
# Sampling audit Monte-Carlo
# ---------------------------------------------------------------------------

@dataclass
class AuditFixture:
    """A block of ``tx_total`` annotated transactions, ``tx_inval`` of them
    carrying forged trust values, on top of a chain that registers them."""
    block: Block
    chain: Any
    invalid: list

    def auditor(self) -> BlockAuditor:
        return BlockAuditor(self.block, self.chain)


def audit_fixture(tx_total: int, tx_inval: int, seed: int = 0, tamper: str = "forge_trust") -> AuditFixture:
    from .data_trust import TrustParams
    from .scenario import Room, RssiModel, SensorGrid

    if not 0 <= tx_inval <= tx_total:
        raise ValueError("need 0 <= tx_inval <= tx_total")
    side = math.ceil(math.sqrt(tx_total))
    grid = SensorGrid(cols=side, rows=math.ceil(tx_total / side), spacing=5.0, margin=2.5)
    room = Room("AUDIT", 0.0, 0.0, side * 5.0, grid.rows * 5.0)
    topo = build_topology([room], grid, 10.0, key_namespace="audit")
    gw = topo.gateways[0]
    gw.sensors = gw.sensors[:tx_total]
    trust = TrustParams()
    chain = topo.genesis(trust, 3.0)
    target = Track.of([(room.width / 2, room.height / 2, 0.0), (room.width / 2, room.height / 2, 1.0)])
    rng = derived_rng(seed, "audit", tx_total, tx_inval)
    txs = emit_observations(topo, target, {}, RssiModel(), 0.0, rng, sensors=gw.sensors)
    honest = generate_block(gw.key, txs, chain, trust)
    block = honest
    if tx_inval:
        profile = AdversaryProfile(AdversaryKind.MALICIOUS_GATEWAY, tamper=Tamper(tamper),
                                   n_invalid_per_block=tx_inval)
        block = apply_gateway_tampering(honest, profile, rng, gw.key)
    return AuditFixture(block, chain, tampered_indices(honest, block))


def simulate_miss_rate(fixture: AuditFixture, tx_val: int, n_val: int, trials: int,
                       seed: int = 0) -> tuple[int, int]:
    """Run ``trials`` independent rounds of ``n_val`` validators each calling
    ``validate_block`` with ``tx_val`` samples; return (misses, trials).

    A round counts as a miss when every validator returns VALID. Checks are
    memoised in one shared auditor, and a round stops at the first validator
    that flags the block since the remaining verdicts cannot undo it.
    """
    from .consensus import ValidationPolicy

    auditor = fixture.auditor()
    policy = ValidationPolicy()
    rng = derived_rng(seed, "montecarlo", len(fixture.block.transactions), len(fixture.invalid), tx_val, n_val)
    misses = 0
    for _ in range(trials):
        for _v in range(n_val):
            verdict = validate_block(fixture.block, fixture.chain, rng, policy, n_val, auditor, tx_val)
            if not verdict.valid:
                break
        else:
            misses += 1
    return misses, trials
