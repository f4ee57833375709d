import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from trustchain.core import DomainError, Observation, Transaction, keygen
from trustchain.data_trust import (
    EvidenceError,
    TrustParams,
    assess,
    colluding_evidence,
    evidence,
    supports,
    tolerable_malicious,
    update_sensor_reputation,
)

P = TrustParams()
_, ME = keygen("me")
_NBRS = [keygen(f"nb{i}")[1] for i in range(40)]


def tx(value, conf=1.0, node=ME):
    return Transaction(Observation(value, node, 0.0), conf, node, b"")


def nbr_txs(values_confs):
    return [tx(v, c, _NBRS[i]) for i, (v, c) in enumerate(values_confs)]


# -- supports ---------------------------------------------------------------

def test_supports_threshold_cases():
    assert supports(tx(-60).observation, tx(-70).observation, P)
    assert not supports(tx(-60).observation, tx(-90).observation, P)
    assert not supports(tx(-60).observation, tx(-85).observation, P)  # |diff| = 25 is not < 25


@given(st.floats(-150, 0), st.floats(-150, 0), st.floats(0.1, 50))
def test_supports_symmetric_and_reflexive(a, b, thr):
    p = TrustParams(support_threshold=thr)
    assert supports(tx(a).observation, tx(b).observation, p) == supports(tx(b).observation, tx(a).observation, p)
    assert supports(tx(a).observation, tx(a).observation, p)


# -- evidence ---------------------------------------------------------------

def test_evidence_examples():
    assert evidence(tx(-60), nbr_txs([(-60, 1.0)] * 3), P) == 1.0
    assert evidence(tx(-60), nbr_txs([(-65, 0.8), (-95, 0.4)]), P) == pytest.approx(0.2, abs=1e-15)
    assert evidence(tx(-60), nbr_txs([(-100, 1.0)] * 4), P) == -1.0


def test_evidence_requires_neighbours():
    with pytest.raises(EvidenceError):
        evidence(tx(-60), [], P)


readings = st.lists(st.tuples(st.floats(-130, -30), st.floats(0, 1)), min_size=1, max_size=30)


def _evidence_oracle(target, rows, thr):
    return sum((c if abs(target - v) < thr else -c) for v, c in rows) / len(rows)


@given(st.floats(-130, -30), readings)
def test_evidence_matches_oracle_and_bounds(target, rows):
    e = evidence(tx(target), nbr_txs(rows), P)
    assert e == pytest.approx(_evidence_oracle(target, rows, P.support_threshold), abs=1e-12)
    assert -1.0 <= e <= 1.0


@given(st.floats(-130, -30), readings)
def test_evidence_is_one_only_for_unanimous_full_confidence(target, rows):
    e = evidence(tx(target), nbr_txs(rows), P)
    unanimous = all(abs(target - v) < P.support_threshold and c == 1.0 for v, c in rows)
    assert (e == 1.0) == unanimous


@given(st.lists(st.tuples(st.booleans(), st.floats(0, 1)), min_size=1, max_size=30))
def test_evidence_antisymmetric_in_labels(labels):
    # a supporting neighbour sits at the target value, a refuting one 100 dB away
    rows = [(-60.0 if s else -160.0, c) for s, c in labels]
    flipped = [(-160.0 if s else -60.0, c) for s, c in labels]
    a = evidence(tx(-60.0), nbr_txs(rows), P)
    b = evidence(tx(-60.0), nbr_txs(flipped), P)
    assert a == pytest.approx(-b, abs=1e-12)


# -- reputation -------------------------------------------------------------

def test_reputation_four_cases():
    assert update_sensor_reputation(0.5, 0.9, 0.5, P) == pytest.approx(0.55)
    assert update_sensor_reputation(0.5, 0.5, 0.5, P) == pytest.approx(0.51)
    assert update_sensor_reputation(0.5, 0.9, -0.5, P) == pytest.approx(0.45)
    assert update_sensor_reputation(0.5, 0.5, -0.5, P) == pytest.approx(0.49)


def test_reputation_thresholds_are_inclusive():
    assert update_sensor_reputation(0.5, 0.7, 0.0, P) == pytest.approx(0.55)


def test_reputation_clamps():
    assert update_sensor_reputation(1.0, 0.9, 0.5, P) == 1.0
    assert update_sensor_reputation(0.0, 0.9, -0.5, P) == 0.0


@given(st.floats(0, 1), st.floats(0, 1), st.floats(-1, 1))
def test_reputation_stays_in_unit_interval(trep, tconf, tsens):
    assert 0.0 <= update_sensor_reputation(trep, tconf, tsens, P) <= 1.0


@given(st.floats(0, 0.99), st.sampled_from([0.01, 0.02, 0.05, 0.1, 0.25]))
def test_reputation_drift_reaches_one(initial, step):
    p = TrustParams(delta_rep_high=step, delta_rep_low=step / 5, initial_sensor_rep=initial)
    # integer oracle: steps needed to cover the gap, tolerant of float representation
    need = math.ceil(round((1 - initial) / step, 9))
    trep, n = initial, 0
    while trep < 1.0:
        trep = update_sensor_reputation(trep, 1.0, 1.0, p)
        n += 1
    assert n == need


def test_default_sensor_reaches_full_reputation_in_four_steps():
    trep = P.initial_sensor_rep
    for _ in range(4):
        trep = update_sensor_reputation(trep, 1.0, 1.0, P)
    assert trep == 1.0


def test_low_confidence_run_penalty_is_opt_in():
    on = TrustParams(penalize_low_conf_runs=True, low_conf_run_length=3)
    assert update_sensor_reputation(0.5, 0.5, 1.0, P, low_conf_run=50) == pytest.approx(0.51)
    assert update_sensor_reputation(0.5, 0.5, 1.0, on, low_conf_run=3) == pytest.approx(0.51)
    assert update_sensor_reputation(0.5, 0.5, 1.0, on, low_conf_run=4) == pytest.approx(0.49)


def test_params_validation():
    with pytest.raises(DomainError):
        TrustParams(delta_rep_high=0.01, delta_rep_low=0.05)
    with pytest.raises(DomainError):
        TrustParams(conf_threshold=1.5)


# -- assess -----------------------------------------------------------------

def test_assess_examples():
    a = assess(tx(-60, 1.0), nbr_txs([(-60, 1.0)] * 3), 0.95, P)
    assert a.tsens == 1.0 and a.trep == 1.0 and a.trust == 1.0

    a = assess(tx(-60, 1.0), nbr_txs([(-60, 0.5), (-100, 0.5)]), 0.9, P)
    assert a.tsens == 0.0 and a.trust == 0.0

    # tsens = -1 with the sensor already at reputation 0.85 -> updated 0.8
    a = assess(tx(-60, 1.0), nbr_txs([(-100, 1.0)] * 2), 0.85, P)
    assert a.trep == pytest.approx(0.8)
    assert a.trust == pytest.approx(-0.8)


@given(st.floats(-130, -30), readings, st.floats(0, 1), st.floats(0, 1))
def test_trust_is_exact_product(target, rows, trep, conf):
    a = assess(tx(target, conf), nbr_txs(rows), trep, P)
    assert a.trust == a.tsens * a.trep * a.tconf
    assert -1.0 <= a.tsens <= 1.0 and 0.0 <= a.trep <= 1.0


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_trust_monotone_in_each_factor(x, y, z, bump):
    def t(a, b, c):
        return a * b * c
    hi = min(1.0, x + bump)
    assert t(hi, y, z) >= t(x, y, z)
    assert t(y, hi, z) >= t(y, x, z)
    assert t(y, z, hi) >= t(y, z, x)


# -- collusion --------------------------------------------------------------

def test_colluding_evidence_examples():
    assert colluding_evidence(36, 12, 1, 1) == (23, -25)
    assert colluding_evidence(1, 1, 1, 1) == (-1, -1)


def test_tolerable_examples():
    assert tolerable_malicious(100, 1) == 49
    assert tolerable_malicious(100, 2.5) == 28
    assert tolerable_malicious(100, 2) == 33
    assert tolerable_malicious(2, 1) == 0
    assert tolerable_malicious(100, 10 ** 9) == 1
    assert tolerable_malicious(100, math.inf) == 0
    with pytest.raises(DomainError):
        tolerable_malicious(1, 1)
    with pytest.raises(DomainError):
        tolerable_malicious(10, 0)


def _honest_wins(K, m, conf_h, conf_m):
    """Direct substitution into the trust comparison with equal reputations."""
    th, tm = colluding_evidence(K - m, m, conf_h, conf_m)
    return th * conf_h > tm * conf_m


def _oracle_tolerable(K, c):
    c = Fraction(c)
    best = -1
    for m in range(0, K + 1):
        if _honest_wins(K, m, Fraction(1), c):
            best = m
    return best


@pytest.mark.parametrize("c", [Fraction(1, 2), Fraction(1), Fraction(2)])
def test_tolerable_matches_brute_force(c):
    for K in range(2, 201):
        m = tolerable_malicious(K, c)
        assert m == _oracle_tolerable(K, c), K
        assert _honest_wins(K, m, Fraction(1), c)
        assert not _honest_wins(K, m + 1, Fraction(1), c)


@given(st.integers(2, 300), st.fractions(min_value=Fraction(1, 20), max_value=20))
def test_tolerable_boundary_property(K, c):
    m = tolerable_malicious(K, c)
    assert _honest_wins(K, m, Fraction(1), c)
    assert not _honest_wins(K, m + 1, Fraction(1), c)
