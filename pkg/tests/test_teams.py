from __future__ import annotations

import math
from fractions import Fraction
import statistics
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrxai.teams import (TrialLog, TrialResponse, accept_reject_breakdown,
                           difficulty_level, load_trial_log, mann_whitney_u,
                           team_accuracy, threshold_sweep, user_accuracy,
                           write_trial_log)

from trialsynth import RESNET_IMAGENET_SWEEP, synthesize_from_sweep


def simple_log(entries):
    """entries: (query_id, confidence, ai_correct, [(user, accepted), ...])"""
    rows = []
    for qid, conf, correct, responses in entries:
        for user, accepted in responses:
            rows.append(TrialResponse(query_id=qid, method="m", ai_confidence=conf,
                                      ai_correct=correct, user_id=user,
                                      accepted=accepted))
    return TrialLog(rows)


# -------------------------------------------------------------- team accuracy

def test_team_accuracy_at_zero_is_ai_alone():
    log = simple_log([
        ("a", 0.9, True, [("u1", False)]),
        ("b", 0.4, False, [("u1", False)]),
        ("c", 0.6, True, [("u1", True)]),
    ])
    row = team_accuracy(log, 0.0)
    assert row.fraction_handled == 1.0
    assert row.ai_accuracy == pytest.approx(100 * 2 / 3)
    assert row.human_accuracy is None
    assert row.team_accuracy is None


def test_team_accuracy_above_max_confidence_is_human_alone():
    log = simple_log([
        ("a", 0.9, True, [("u1", True), ("u2", False)]),
        ("b", 0.4, False, [("u1", False)]),
    ])
    row = team_accuracy(log, 0.95)
    assert row.fraction_handled == 0.0
    assert row.ai_accuracy is None
    # responses: accept-correct (right), reject-correct (wrong), reject-wrong (right)
    assert row.human_accuracy == pytest.approx(100 * 2 / 3)
    assert row.team_accuracy is None


def test_team_accuracy_published_row_arithmetic():
    # fraction 0.7595 at 93.55% AI with 80.50% human mixes to 90.41
    log = synthesize_from_sweep(n_queries=10_000)
    row = team_accuracy(log, 0.65)
    assert row.fraction_handled == pytest.approx(0.7595, abs=2e-4)
    assert row.ai_accuracy == pytest.approx(93.55, abs=0.02)
    assert row.human_accuracy == pytest.approx(80.50, abs=0.02)
    assert row.team_accuracy == pytest.approx(90.41, abs=0.01)


def test_team_identity_holds_exactly():
    log = synthesize_from_sweep(n_queries=5_000)
    for t in (0.2, 0.5, 0.65):
        row = team_accuracy(log, t)
        assert row.team_accuracy == pytest.approx(
            row.fraction_handled * row.ai_accuracy
            + (1 - row.fraction_handled) * row.human_accuracy, abs=1e-9)


def test_boundary_is_inclusive_for_ai_side():
    log = simple_log([
        ("a", 0.75, True, [("u1", True)]),
        ("b", 0.5, False, [("u1", False)]),
    ])
    row = team_accuracy(log, 0.75)
    assert row.fraction_handled == 0.5  # confidence exactly at T goes to the AI


# ------------------------------------------------------------- threshold sweep

def test_sweep_all_ai_correct_team_always_hundred():
    entries = [(f"q{i}", 0.05 * (i % 19) + 0.03, True, [("u1", i % 3 != 0)])
               for i in range(40)]
    log = simple_log(entries)
    table = threshold_sweep(log)
    defined = [r for r in table.rows if r.team_accuracy is not None]
    assert defined, "expected defined rows"
    for row in defined:
        assert row.ai_accuracy == pytest.approx(100.0)
    assert table.optimal.threshold == min(r.threshold for r in defined
                                          if r.team_accuracy == table.optimal.team_accuracy)


def test_sweep_replays_published_table_within_tolerance():
    log = synthesize_from_sweep(n_queries=100_000)
    table = threshold_sweep(log)
    by_threshold = {round(r.threshold, 2): r for r in table.rows}
    for t, ai, frac, hum, team in RESNET_IMAGENET_SWEEP:
        row = by_threshold[round(t, 2)]
        if team is None:
            assert row.team_accuracy is None
        else:
            assert row.team_accuracy == pytest.approx(team, abs=0.01)
    # endpoints: T=0 is AI-alone, T=1 is human-alone
    zero = by_threshold[0.0]
    assert zero.fraction_handled == 1.0
    assert zero.human_accuracy is None
    one = by_threshold[1.0]
    assert one.fraction_handled == 0.0
    assert one.ai_accuracy is None
    all_rows = log.rows
    human_alone = 100 * sum(r.human_correct for r in all_rows) / len(all_rows)
    assert one.human_accuracy == pytest.approx(human_alone, abs=1e-12)


def test_sweep_top_endpoint_excludes_full_confidence():
    log = simple_log([
        ("a", 1.0, True, [("u1", False)]),
        ("b", 0.5, False, [("u1", False)]),
    ])
    table = threshold_sweep(log)
    top = [r for r in table.rows if r.threshold == 1.0][0]
    assert top.fraction_handled == 0.0  # even confidence 1.0 defers at the endpoint
    assert team_accuracy(log, 1.0).fraction_handled == 0.5  # literal splitting differs


def test_sweep_optimum_matches_bruteforce(rng):
    rows = []
    for i in range(300):
        conf = float(rng.integers(1, 21)) / 20.0
        correct = bool(rng.uniform() < conf * 0.8 + 0.1)
        rows.append((f"q{i}", conf, correct,
                     [(f"u{j}", bool(rng.uniform() < 0.7)) for j in range(2)]))
    log = simple_log(rows)
    table = threshold_sweep(log)
    # independent loop over the same grid; exact rational comparison so the
    # smallest-threshold tie rule is ulp-proof
    best_team, best_t = None, None
    for t in [i / 20 for i in range(20)] + [1.0]:
        cut = math.nextafter(1.0, 2.0) if t >= 1.0 else t
        handled = [q for q in log.trials if q.ai_confidence >= cut]
        deferred = [q for q in log.trials if q.ai_confidence < cut]
        responses = [r for q in deferred for r in q.responses]
        if not handled or not responses:
            continue
        team = 100 * (Fraction(sum(q.ai_correct for q in handled), len(log.trials))
                      + Fraction(len(deferred), len(log.trials))
                      * Fraction(sum(r.human_correct for r in responses), len(responses)))
        if best_team is None or team > best_team:
            best_team, best_t = team, t
    assert table.optimal.team_accuracy == pytest.approx(float(best_team), abs=1e-9)
    assert table.optimal.threshold == best_t


def test_sweep_csv_has_na_cells():
    log = simple_log([("a", 0.5, True, [("u1", True)])])
    csv = threshold_sweep(log).to_csv()
    assert "n/a" in csv
    assert csv.splitlines()[0].startswith("threshold,")


# ------------------------------------------------------------ difficulty level

@pytest.mark.parametrize("correct,confidence,expected", [
    (True, 0.20, "Easy"),
    (False, 0.80, "Easy"),
    (True, 0.50, "Medium"),
    (False, 0.50, "Medium"),
    (True, 0.80, "Hard"),
    (False, 0.20, "Hard"),
])
def test_difficulty_quoted_cells(correct, confidence, expected):
    assert difficulty_level(correct, confidence) == expected


def test_difficulty_boundaries():
    assert difficulty_level(True, 0.35) == "Medium"
    assert difficulty_level(True, 0.75) == "Hard"
    assert difficulty_level(False, 0.35) == "Medium"
    assert difficulty_level(False, 0.75) == "Easy"
    assert difficulty_level(True, 1.0) == "Hard"
    assert difficulty_level(False, 1.0) == "Easy"
    assert difficulty_level(True, 0.0) == "Easy"


def test_difficulty_partitions_unit_interval():
    for correct in (True, False):
        for i in range(0, 1001):
            level = difficulty_level(correct, i / 1000)
            assert level in ("Easy", "Medium", "Hard")


# --------------------------------------------------------------- user accuracy

def perfect_user_log(n_trials=30):
    rows = []
    for i in range(n_trials):
        rows.append(TrialResponse(f"q{i}", "m", 0.5, True, "ace", True))
    return TrialLog(rows)


def test_user_perfect_retained():
    summary = user_accuracy(perfect_user_log())
    assert summary.per_user["ace"] == 1.0
    assert summary.excluded_users == ()


def test_user_at_boundary_excluded():
    rows = []
    for i in range(20):  # 11/20 = 0.55 exactly
        correct = i < 11
        rows.append(TrialResponse(f"q{i}", "m", 0.5, True, "edge", correct))
    rows.append(TrialResponse("q_x", "m", 0.5, True, "good", True))
    summary = user_accuracy(TrialLog(rows))
    assert summary.per_user["edge"] == pytest.approx(0.55)
    assert summary.excluded_users == ("edge",)
    assert summary.per_method["m"][2] == 1  # only the good user aggregates


def test_user_exclusion_idempotent(rng):
    rows = []
    for u in range(12):
        quality = 0.4 + 0.05 * u
        for i in range(30):
            correct = bool(rng.uniform() < quality)
            rows.append(TrialResponse(f"q{u}_{i}", "m", 0.5, True, f"u{u:02d}", correct))
    log = TrialLog(rows)
    first = user_accuracy(log)
    retained_rows = [r for r in log.rows if r.user_id not in first.excluded_users]
    second = user_accuracy(TrialLog(retained_rows))
    assert second.excluded_users == ()


# Hit counts over 30 trials for a 59-user cohort engineered to aggregate to
# mean 78.87, sample deviation 6.57.
COHORT_HITS = ([20] * 4 + [21] * 4 + [22] * 8 + [23] * 12 + [24] * 10
               + [25] * 13 + [26] * 4 + [27] * 2 + [28] + [29])


def test_user_cohort_matches_published_aggregate():
    assert len(COHORT_HITS) == 59
    rows = []
    for u, hits in enumerate(COHORT_HITS):
        for i in range(30):
            correct = i < hits
            rows.append(TrialResponse(f"q{u}_{i}", "emd_corr", 0.5, True,
                                      f"user{u:02d}", correct))
    summary = user_accuracy(TrialLog(rows))
    mean, std, n = summary.per_method["emd_corr"]
    # independent oracle over the engineered accuracies
    accs = [100 * h / 30 for h in COHORT_HITS]
    assert mean == pytest.approx(statistics.mean(accs), abs=1e-9)
    assert std == pytest.approx(statistics.stdev(accs), abs=1e-9)
    assert n == 59
    assert mean == pytest.approx(78.87, abs=0.01)
    assert std == pytest.approx(6.57, abs=0.01)


# --------------------------------------------------------------- accept/reject

def test_accept_reject_all_accept():
    log = simple_log([("a", 0.5, True, [("u1", True), ("u2", True)])])
    breakdown = accept_reject_breakdown(log)
    assert breakdown.per_method["m"] == (100.0, 0.0)


def test_accept_reject_half():
    log = simple_log([("a", 0.5, True, [("u1", True), ("u2", False)])])
    assert accept_reject_breakdown(log).per_method["m"] == (50.0, 50.0)


def test_accept_reject_published_rate_fixture():
    # 8153 accepts of 10000 responses reproduces the 81.53% acceptance row
    rows = []
    for i in range(10_000):
        rows.append(TrialResponse(f"q{i}", "knn", 0.5, True, f"u{i % 60}", i < 8153))
    breakdown = accept_reject_breakdown(TrialLog(rows))
    accept, reject = breakdown.per_method["knn"]
    assert accept == pytest.approx(81.53, abs=0.01)
    assert reject == pytest.approx(18.47, abs=0.01)
    assert accept + reject == pytest.approx(100.0, abs=1e-9)


def test_accept_reject_by_difficulty():
    log = simple_log([
        ("easy1", 0.2, True, [("u1", True), ("u2", False)]),
        ("hard1", 0.9, True, [("u1", True)]),
        ("med1", 0.5, False, [("u1", False)]),
    ])
    breakdown = accept_reject_breakdown(log)
    assert breakdown.per_difficulty["Easy"] == (50.0, 50.0)
    assert breakdown.per_difficulty["Hard"] == (100.0, 0.0)
    assert breakdown.per_difficulty["Medium"] == (0.0, 100.0)


# ----------------------------------------------------------------- trial logs

def test_trial_log_roundtrip(tmp_path):
    log = synthesize_from_sweep(n_queries=500)
    path = tmp_path / "trials.tsv"
    write_trial_log(log, path)
    loaded = load_trial_log(path)
    assert loaded.rows == log.rows


def test_trial_log_rejects_inconsistent_verdicts():
    rows = [
        TrialResponse("q", "m", 0.5, True, "u1", True),
        TrialResponse("q", "m", 0.6, True, "u2", True),
    ]
    with pytest.raises(ValueError, match="inconsistent"):
        TrialLog(rows)


def test_trial_log_confidence_range():
    with pytest.raises(ValueError, match="confidence"):
        TrialResponse("q", "m", 0.0, True, "u", True)


# ---------------------------------------------------------------- mann-whitney

def oracle_mwu(a, b):
    """Independent enumeration oracle: count-based U and tail probability."""
    def u_of(x, y):
        u = 0.0
        for xi in x:
            for yi in y:
                if xi > yi:
                    u += 1.0
                elif xi == yi:
                    u += 0.5
        return u

    u_obs = u_of(a, b)
    pooled = list(a) + list(b)
    n = len(a)
    center = n * len(b) / 2.0
    hits = 0
    total = 0
    for chosen in combinations(range(len(pooled)), n):
        total += 1
        chosen_set = set(chosen)
        xs = [pooled[i] for i in chosen]
        ys = [pooled[i] for i in range(len(pooled)) if i not in chosen_set]
        if abs(u_of(xs, ys) - center) >= abs(u_obs - center):
            hits += 1
    return u_obs, hits / total


def test_mwu_identical_samples():
    a = [float(i) for i in range(10)]
    u, p = mann_whitney_u(a, list(a))
    assert u == 50.0
    assert p == pytest.approx(1.0, abs=1e-9)


def test_mwu_fully_separated_exact_tail():
    a = [1.0, 2.0, 3.0, 4.0, 5.0]
    b = [10.0, 11.0, 12.0, 13.0, 14.0]
    u, p = mann_whitney_u(a, b)
    assert u == 0.0
    assert p == pytest.approx(2 / math.comb(10, 5), abs=1e-15)
    u2, _ = mann_whitney_u(b, a)
    assert u2 == 25.0


def test_mwu_matches_enumeration_oracle(rng):
    for trial in range(25):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(2, 7))
        a = list(np.round(rng.uniform(0, 5, size=n), 1))
        b = list(np.round(rng.uniform(0, 5, size=m), 1))
        u, p = mann_whitney_u(a, b)
        u_o, p_o = oracle_mwu(a, b)
        assert u == u_o
        assert p == pytest.approx(p_o, abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=40, deadline=None)
def test_mwu_u_identity(seed, n, m):
    r = np.random.default_rng(seed)
    a = list(np.round(r.uniform(0, 3, size=n), 1))
    b = list(np.round(r.uniform(0, 3, size=m), 1))
    u1, _ = mann_whitney_u(a, b)
    u2, _ = mann_whitney_u(b, a)
    assert u1 + u2 == pytest.approx(n * m, abs=1e-12)


def test_mwu_normal_approximation_with_ties(rng):
    a = list(rng.integers(0, 5, size=30).astype(float))
    b = list(rng.integers(0, 5, size=30).astype(float))
    u, p = mann_whitney_u(a, b)
    assert 0.0 <= p <= 1.0
    u2, p2 = mann_whitney_u(b, a)
    assert u + u2 == pytest.approx(900.0)
    assert p == pytest.approx(p2, abs=1e-12)


def test_mwu_all_values_tied():
    u, p = mann_whitney_u([1.0] * 25, [1.0] * 25)
    assert u == pytest.approx(312.5)
    assert p == 1.0


def test_mwu_empty_rejected():
    with pytest.raises(ValueError):
        mann_whitney_u([], [1.0])
