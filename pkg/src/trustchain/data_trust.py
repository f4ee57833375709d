"""Observation trust at the data layer.

A gateway scores each sensor observation from three inputs: how strongly the
neighbouring sensors corroborate it (evidence), the sensor's long-term
reputation, and the confidence the sensor reported itself. The score is the
product of the three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence

from .core import DomainError, Observation, Transaction, TxId


class EvidenceError(DomainError):
    """Evidence is undefined because the sensor has no neighbour reports."""


@dataclass(frozen=True)
class TrustParams:
    support_threshold: float = 25.0   # dB
    neighbor_radius: float = 10.0     # m
    conf_threshold: float = 0.7
    evid_threshold: float = 0.0
    delta_rep_high: float = 0.05
    delta_rep_low: float = 0.01
    initial_sensor_rep: float = 0.8
    # Penalise long runs of low-confidence reports regardless of evidence.
    penalize_low_conf_runs: bool = False
    low_conf_run_length: int = 10

    def __post_init__(self):
        if not self.delta_rep_low < self.delta_rep_high:
            raise DomainError("delta_rep_low must be smaller than delta_rep_high")
        if self.delta_rep_low <= 0:
            raise DomainError("reputation steps must be positive")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise DomainError("conf_threshold must lie in [0, 1]")
        if not 0.0 <= self.initial_sensor_rep <= 1.0:
            raise DomainError("initial_sensor_rep must lie in [0, 1]")
        if self.low_conf_run_length < 0:
            raise DomainError("low_conf_run_length must be non-negative")


@dataclass(frozen=True)
class TrustAssessment:
    tsens: float
    trep: float
    tconf: float
    trust: float
    low_conf_run: int = 0


def supports(obs_a: Observation, obs_b: Observation, params: TrustParams) -> bool:
    return abs(obs_a.value - obs_b.value) < params.support_threshold


def evidence(target: Transaction, neighbor_txs: Sequence[Transaction], params: TrustParams) -> float:
    """Confidence-weighted vote of the neighbours on ``target``.

    Each neighbour adds its own confidence if its reading supports the target
    reading and subtracts it otherwise; the sum is averaged over neighbours.
    """
    if not neighbor_txs:
        raise EvidenceError(f"sensor {target.sensor_pk!r} has no neighbour reports")
    total = 0.0
    for nb in neighbor_txs:
        if supports(target.observation, nb.observation, params):
            total += nb.confidence
        else:
            total -= nb.confidence
    return total / len(neighbor_txs)


def next_low_conf_run(run: int, tconf: float, params: TrustParams) -> int:
    return run + 1 if tconf < params.conf_threshold else 0


def update_sensor_reputation(
    trep: float, tconf: float, tsens: float, params: TrustParams, low_conf_run: int = 0
) -> float:
    """Four-case reward/penalty rule, clamped to [0, 1].

    ``low_conf_run`` is the length of the low-confidence streak including this
    report; it only matters when ``params.penalize_low_conf_runs`` is set.
    """
    high_conf = tconf >= params.conf_threshold
    high_evid = tsens >= params.evid_threshold
    step = params.delta_rep_high if high_conf else params.delta_rep_low
    if not high_evid:
        step = -step
    if params.penalize_low_conf_runs and low_conf_run > params.low_conf_run_length:
        step = -params.delta_rep_low
    # rounding keeps repeated fixed steps landing on the bounds exactly
    return min(1.0, max(0.0, round(trep + step, 12)))


def assess(
    target: Transaction,
    neighbor_txs: Sequence[Transaction],
    trep_prev: float,
    params: TrustParams,
    low_conf_run_prev: int = 0,
) -> TrustAssessment:
    tsens = evidence(target, neighbor_txs, params)
    tconf = target.confidence
    run = next_low_conf_run(low_conf_run_prev, tconf, params)
    # the post-update reputation is the one recorded next to the trust value
    trep = update_sensor_reputation(trep_prev, tconf, tsens, params, run)
    return TrustAssessment(tsens, trep, tconf, tsens * trep * tconf, run)


def annotate(tx: Transaction, assessment: TrustAssessment, tx_id: Optional[TxId] = None) -> Transaction:
    return replace(tx, trust=assessment.trust, sensor_reputation=assessment.trep, tx_id=tx_id)


# ---------------------------------------------------------------------------
# Collusion analysis
# ---------------------------------------------------------------------------

def tolerable_malicious(K: int, c: float) -> int:
    """Largest number of colluding sensors out of ``K`` for which honest
    observations still score strictly higher trust, where ``c`` is the ratio
    of malicious to honest reported confidence."""
    if K < 2:
        raise DomainError("K must be at least 2")
    if c <= 0:
        raise DomainError("confidence ratio must be positive")
    if c == math.inf:
        # the bound falls to 1 as honest confidence vanishes; 1 > m leaves 0
        return 0
    c = Fraction(c)
    bound = (K + c - 1) / (c + 1)
    return max(0, math.ceil(bound) - 1)


def colluding_evidence(n_honest: int, n_malicious: int, conf_h: float, conf_m: float) -> tuple[float, float]:
    """Un-normalised shared evidence of the honest and the malicious group
    when every sensor neighbours every other one."""
    if n_honest + n_malicious < 2:
        raise DomainError("need at least two sensors")
    tsens_h = (n_honest - 1) * conf_h - n_malicious * conf_m
    tsens_m = (n_malicious - 1) * conf_m - n_honest * conf_h
    return tsens_h, tsens_m
