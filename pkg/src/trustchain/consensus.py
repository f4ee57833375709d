"""Blockchain layer: block generation, reputation-adaptive block validation,
the VALID / INVALID-TRANSACTION-ID vote protocol, and gateway reputation.

Blocks from reputable gateways get less scrutiny. Each validator checks a
random subset of transactions whose size shrinks with the generator's
reputation and with the number of validators. The closed-form chance that
every validator misses all invalid transactions is ``p_no_detection``.

Reputation only moves through accepted/rejected blocks. The attack
probability as a function of reputation is a modelling motivation and has no
executable counterpart here.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

from .core import (
    Block,
    ChainStore,
    DomainError,
    NodeId,
    NodeKind,
    SigningKey,
    Transaction,
    TxId,
    block_is_well_formed,
    seal_block,
    verify_signature,
    verify_transaction,
)
from .data_trust import EvidenceError, TrustParams, annotate, assess

log = logging.getLogger(__name__)

TRUST_REL_TOL = 1e-9


@dataclass(frozen=True)
class ValidationPolicy:
    gamma0: float = 4.7 / 4
    gamma1: float = -0.7 / 4
    delta: float = 0.03
    rep_min: float = 1.0
    rep_max: float = 5.0
    delta_r: float = 0.01
    beta: float = 10.0

    def __post_init__(self):
        if self.rep_min > self.rep_max:
            raise DomainError("rep_min must not exceed rep_max")
        if self.delta < 0:
            raise DomainError("delta must be non-negative")
        if self.delta_r <= 0:
            raise DomainError("delta_r must be positive")
        if self.beta <= 1:
            raise DomainError("beta must exceed 1")

    def clamp(self, rep: float) -> float:
        return min(self.rep_max, max(self.rep_min, rep))


# ---------------------------------------------------------------------------
# Sampling policy and its closed-form miss probability
# ---------------------------------------------------------------------------

_PVT_FLOOR = 1e-12


def pvt(rep: float, n_val: int, policy: ValidationPolicy) -> float:
    """Fraction of a block each validator checks, in (0, 1]."""
    if n_val < 1:
        raise DomainError("n_val must be at least 1")
    raw = (policy.gamma0 + policy.gamma1 * rep) * math.exp(-policy.delta * n_val)
    return min(1.0, max(_PVT_FLOOR, raw))


def tx_val_count(tx_total: int, rep: float, n_val: int, policy: ValidationPolicy) -> int:
    if tx_total < 1:
        raise DomainError("tx_total must be at least 1")
    # guard against products like 24.000000000000004 rounding up a whole step
    n = math.ceil(tx_total * pvt(rep, n_val, policy) - 1e-9)
    return min(tx_total, max(1, n))


def _log_miss_single(tx_total: int, tx_inval: int, tx_val: int) -> float:
    """log of C(total-inval, val) / C(total, val); -inf if a miss is impossible."""
    if tx_val > tx_total - tx_inval:
        return -math.inf
    return math.log(math.comb(tx_total - tx_inval, tx_val)) - math.log(math.comb(tx_total, tx_val))


def p_no_detection(tx_total: int, tx_inval: int, tx_val: int, n_val: int) -> float:
    """Probability that ``n_val`` independent validators, each sampling
    ``tx_val`` of ``tx_total`` transactions without replacement, all miss the
    ``tx_inval`` invalid ones."""
    if not 0 <= tx_inval <= tx_total:
        raise DomainError("need 0 <= tx_inval <= tx_total")
    if not 1 <= tx_val <= tx_total:
        raise DomainError("need 1 <= tx_val <= tx_total")
    if n_val < 0:
        raise DomainError("n_val must be non-negative")
    if tx_inval == 0:
        return 1.0
    lq = _log_miss_single(tx_total, tx_inval, tx_val)
    if lq == -math.inf:
        return 0.0 if n_val > 0 else 1.0
    return math.exp(n_val * lq)


def min_validators(tx_total: int, tx_inval: int, tx_val: int, threshold: float) -> int:
    """Smallest validator count pushing the miss probability below ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise DomainError("threshold must lie in (0, 1)")
    if tx_inval == 0:
        raise DomainError("no invalid transactions: the miss probability is always 1")
    lq = _log_miss_single(tx_total, tx_inval, tx_val)
    if lq == -math.inf:
        return 1
    n = max(1, math.floor(math.log(threshold) / lq) + 1)
    while p_no_detection(tx_total, tx_inval, tx_val, n) >= threshold:
        n += 1
    while n > 1 and p_no_detection(tx_total, tx_inval, tx_val, n - 1) < threshold:
        n -= 1
    return n


def min_tx_val(tx_total: int, tx_inval: int, n_val: int, threshold: float) -> int:
    """Smallest per-validator sample size pushing the miss probability below
    ``threshold`` for a fixed validator count."""
    for v in range(1, tx_total + 1):
        if p_no_detection(tx_total, tx_inval, v, n_val) < threshold:
            return v
    raise DomainError("threshold unreachable")


def update_gateway_reputation(rep: float, accepted: bool, policy: ValidationPolicy) -> float:
    if accepted:
        new = rep + policy.delta_r
    else:
        new = rep - policy.beta * policy.delta_r
    # rounding keeps 200 steps of 0.01 from 3.0 landing on 5.0 exactly
    return policy.clamp(round(new, 12))


def initial_gateway_reputation(base: float, policy: ValidationPolicy, external: float = 0.0) -> float:
    """Registration-time reputation; ``external`` is the reputation-transfer
    offset imported from another system."""
    return policy.clamp(base + external)


# ---------------------------------------------------------------------------
# Verdicts and votes
# ---------------------------------------------------------------------------

class VerdictKind(str, Enum):
    VALID = "valid"
    INVALID_TX = "invalid_tx"
    INVALID_BLOCK = "invalid_block"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    tx_id: Optional[TxId] = None
    reason: str = ""

    @property
    def valid(self) -> bool:
        return self.kind is VerdictKind.VALID

    @classmethod
    def ok(cls) -> "Verdict":
        return cls(VerdictKind.VALID)

    def to_bytes(self) -> bytes:
        tag = {VerdictKind.VALID: b"\x00", VerdictKind.INVALID_TX: b"\x01",
               VerdictKind.INVALID_BLOCK: b"\x02"}[self.kind]
        return tag + (self.tx_id.to_bytes() if self.tx_id is not None else b"")


@dataclass(frozen=True)
class ConsensusMsg:
    voter: NodeId
    block_hash: bytes
    verdict: Verdict
    signature: bytes

    def payload(self) -> bytes:
        return vote_payload(self.voter, self.block_hash, self.verdict)

    def authentic(self) -> bool:
        return verify_signature(self.voter, self.payload(), self.signature)


def vote_payload(voter: NodeId, block_hash: bytes, verdict: Verdict) -> bytes:
    return len(voter.public_key).to_bytes(4, "big") + voter.public_key + block_hash + verdict.to_bytes()


def make_vote(key: SigningKey, block_hash: bytes, verdict: Verdict) -> ConsensusMsg:
    sig = key.sign(vote_payload(key.node_id, block_hash, verdict))
    return ConsensusMsg(key.node_id, block_hash, verdict, sig)


# ---------------------------------------------------------------------------
# Block checks
# ---------------------------------------------------------------------------

class BlockAuditor:
    """Deterministic checks of one block against the chain it extends.

    Every honest node runs the same checks on the same data, so results are
    memoised per block and shared across the validators of a simulation.
    With ``recompute_trust`` false only signatures and identities are checked
    (the baseline without the trust architecture).
    """

    def __init__(self, block: Block, chain: ChainStore, recompute_trust: bool = True):
        self.block = block
        self.chain = chain
        self.recompute_trust = recompute_trust
        self.params = chain.trust_params or TrustParams()
        self._tx_ok: list = [None] * len(block.transactions)
        self._block_problem: Optional[str] = None
        self._block_checked = False

    def block_problem(self) -> Optional[str]:
        if not self._block_checked:
            self._block_problem = self._check_block()
            self._block_checked = True
        return self._block_problem

    def _check_block(self) -> Optional[str]:
        b, chain = self.block, self.chain
        gen = chain.profile(b.generator)
        if gen is None or gen.kind is not NodeKind.GATEWAY:
            return "unknown generator"
        if b.height != chain.height:
            return "bad height"
        if b.prev_hash != chain.tip_hash:
            return "bad hash link"
        if not block_is_well_formed(b):
            return "bad block hash or generator signature"
        return None

    def tx_ok(self, index: int) -> bool:
        ok = self._tx_ok[index]
        if ok is None:
            ok = self._tx_ok[index] = self._check_tx(index)
        return ok

    def _check_tx(self, index: int) -> bool:
        b = self.block
        tx = b.transactions[index]
        if tx.tx_id != TxId(b.height, index):
            return False
        if not verify_transaction(tx, self.chain.profiles):
            return False
        prof = self.chain.profiles[tx.sensor_pk]
        if prof.gateway != b.generator:
            return False
        if any(t.sensor_pk == tx.sensor_pk for t in b.transactions[:index]):
            return False
        if not self.recompute_trust:
            return True
        if not tx.annotated:
            return False
        nb = prof.neighbors
        nbrs = [t for t in b.transactions if t.sensor_pk in nb]
        try:
            a = assess(tx, nbrs, prof.reputation, self.params, prof.low_conf_run)
        except EvidenceError:
            return False
        return (
            math.isclose(a.trust, tx.trust, rel_tol=TRUST_REL_TOL, abs_tol=1e-15)
            and math.isclose(a.trep, tx.sensor_reputation, rel_tol=TRUST_REL_TOL, abs_tol=1e-15)
        )


def validate_block(
    block: Block,
    chain: ChainStore,
    rng: random.Random,
    policy: ValidationPolicy,
    n_val: int,
    auditor: Optional[BlockAuditor] = None,
    tx_val: Optional[int] = None,
) -> Verdict:
    """One validator's verdict on ``block``.

    The validator samples ``tx_val`` transactions uniformly without
    replacement (by default the count the policy assigns to the generator's
    reputation) and reports the first one that fails its checks.
    """
    return validate_block_counted(block, chain, rng, policy, n_val, auditor, tx_val)[0]


def validate_block_counted(
    block: Block,
    chain: ChainStore,
    rng: random.Random,
    policy: ValidationPolicy,
    n_val: int,
    auditor: Optional[BlockAuditor] = None,
    tx_val: Optional[int] = None,
) -> tuple[Verdict, int]:
    """``validate_block`` plus the number of transactions actually checked."""
    if auditor is None:
        auditor = BlockAuditor(block, chain)
    problem = auditor.block_problem()
    if problem is not None:
        return Verdict(VerdictKind.INVALID_BLOCK, None, problem), 0
    total = len(block.transactions)
    if total == 0:
        return Verdict.ok(), 0
    if tx_val is None:
        if auditor.recompute_trust:
            tx_val = tx_val_count(total, chain.reputation(block.generator), n_val, policy)
        else:
            tx_val = total
    checked = 0
    for i in rng.sample(range(total), min(tx_val, total)):
        checked += 1
        if not auditor.tx_ok(i):
            return Verdict(VerdictKind.INVALID_TX, TxId(block.height, i), "check failed"), checked
    return Verdict.ok(), checked


@dataclass(frozen=True)
class ConsensusOutcome:
    accepted: bool
    counted: tuple
    rechecked: int = 0

    def __bool__(self) -> bool:
        return self.accepted


def consensus_round(
    block: Block,
    votes: Iterable[ConsensusMsg],
    chain: ChainStore,
    auditor: Optional[BlockAuditor] = None,
    eligible: Optional[set] = None,
) -> ConsensusOutcome:
    """Decide a block from the validators' votes.

    Only the first authentic vote per voter counts. Unanimous VALID accepts.
    Otherwise every transaction named by a counted INVALID vote is re-checked;
    one confirmed failure rejects the block, and if all named transactions
    verify the block is accepted.
    """
    if auditor is None:
        auditor = BlockAuditor(block, chain)
    seen: set = set()
    counted = []
    for v in votes:
        if v.voter in seen:
            continue
        if eligible is not None and v.voter not in eligible:
            continue
        if v.block_hash != block.block_hash or not v.authentic():
            continue
        seen.add(v.voter)
        counted.append(v)

    rechecked = 0
    rejected = False
    for v in counted:
        verdict = v.verdict
        if verdict.kind is VerdictKind.INVALID_BLOCK:
            rechecked += 1
            if auditor.block_problem() is not None:
                rejected = True
        elif verdict.kind is VerdictKind.INVALID_TX:
            idx = block.tx_index(verdict.tx_id) if verdict.tx_id is not None else None
            if idx is None:
                continue
            rechecked += 1
            if auditor.block_problem() is not None or not auditor.tx_ok(idx):
                rejected = True
    return ConsensusOutcome(not rejected, tuple(counted), rechecked)


# ---------------------------------------------------------------------------
# Block generation
# ---------------------------------------------------------------------------

def generate_block(
    key: SigningKey,
    pending: Sequence[Transaction],
    chain: ChainStore,
    params: Optional[TrustParams] = None,
    discarded: Optional[list] = None,
    with_trust: bool = True,
) -> Block:
    """Build, annotate and sign the next block for gateway ``key``.

    Transactions failing signature or identity checks, belonging to another
    gateway, or repeating a sensor already in the block are dropped (and
    appended to ``discarded`` as ``(tx, reason)`` when given). With
    ``with_trust`` false the block carries raw transactions only.
    """
    params = params or chain.trust_params or TrustParams()
    height = chain.height
    kept = []
    seen = set()
    for tx in pending:
        chk = verify_transaction(tx, chain.profiles)
        reason = None
        if not chk:
            reason = chk.reason
        elif chain.profiles[tx.sensor_pk].gateway != key.node_id:
            reason = "foreign sensor"
        elif tx.sensor_pk in seen:
            reason = "duplicate sensor report"
        if reason is not None:
            log.info("gateway %s drops tx from %s: %s", key.node_id.short(),
                     tx.sensor_pk.short(), reason)
            if discarded is not None:
                discarded.append((tx, reason))
            continue
        seen.add(tx.sensor_pk)
        kept.append(tx)

    out = []
    for i, tx in enumerate(kept):
        tx_id = TxId(height, i)
        if not with_trust:
            out.append(replace(tx, trust=None, sensor_reputation=None, tx_id=tx_id))
            continue
        prof = chain.profiles[tx.sensor_pk]
        nb = prof.neighbors
        nbrs = [t for t in kept if t.sensor_pk in nb]
        a = assess(tx, nbrs, prof.reputation, params, prof.low_conf_run)
        out.append(annotate(tx, a, tx_id))
    return seal_block(key, height, chain.tip_hash, out)
