"""Human-AI team analytics over trial logs.

A trial log holds one row per human response: the query's AI confidence and
correctness plus the user's accept/reject decision. A response is correct
when the user accepted a correct prediction or rejected a wrong one.

Team accuracy at threshold T mixes AI-alone accuracy on the queries the AI
handles (confidence >= T) with human accuracy on the deferred rest:

    team = fraction_handled * ai_accuracy + (1 - fraction_handled) * human_accuracy

Sides with no queries (or no responses) are reported as absent, never as 0.

The log file is tab-separated UTF-8 with a header:
    query_id  method  ai_confidence  ai_correct  user_id  accepted
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

TRIAL_LOG_FIELDS = ("query_id", "method", "ai_confidence", "ai_correct", "user_id", "accepted")

SWEEP_GRID = tuple(i / 20 for i in range(1, 20))  # 0.05 .. 0.95
USER_EXCLUSION_THRESHOLD = 0.55  # at or below is near chance level

DIFFICULTY_LEVELS = ("Easy", "Medium", "Hard")


@dataclass(frozen=True)
class TrialResponse:
    query_id: str
    method: str
    ai_confidence: float
    ai_correct: bool
    user_id: str
    accepted: bool

    def __post_init__(self):
        if not 0.0 < self.ai_confidence <= 1.0:
            raise ValueError(
                f"{self.query_id}: ai_confidence must be in (0, 1], got {self.ai_confidence}")

    @property
    def human_correct(self) -> bool:
        return self.accepted == self.ai_correct


@dataclass(frozen=True)
class QueryTrial:
    """One (query, method) with its AI verdict and all human responses."""

    query_id: str
    method: str
    ai_confidence: float
    ai_correct: bool
    responses: tuple[TrialResponse, ...]


class TrialLog:
    """Immutable collection of trial responses with per-query grouping."""

    def __init__(self, rows: Iterable[TrialResponse]):
        self._rows = tuple(rows)
        queries: dict[tuple[str, str], list[TrialResponse]] = {}
        for r in self._rows:
            queries.setdefault((r.query_id, r.method), []).append(r)
        trials = []
        for (qid, method), rs in sorted(queries.items()):
            confs = {r.ai_confidence for r in rs}
            corrects = {r.ai_correct for r in rs}
            if len(confs) > 1 or len(corrects) > 1:
                raise ValueError(f"inconsistent AI verdict for query {qid!r} method {method!r}")
            trials.append(QueryTrial(query_id=qid, method=method,
                                     ai_confidence=rs[0].ai_confidence,
                                     ai_correct=rs[0].ai_correct, responses=tuple(rs)))
        self._trials = tuple(trials)

    @property
    def rows(self) -> tuple[TrialResponse, ...]:
        return self._rows

    @property
    def trials(self) -> tuple[QueryTrial, ...]:
        return self._trials

    def __len__(self) -> int:
        return len(self._rows)

    def methods(self) -> tuple[str, ...]:
        return tuple(sorted({r.method for r in self._rows}))

    def for_method(self, method: str) -> "TrialLog":
        return TrialLog(r for r in self._rows if r.method == method)


def write_trial_log(log: TrialLog, path: str | Path) -> None:
    lines = ["\t".join(TRIAL_LOG_FIELDS)]
    for r in log.rows:
        lines.append("\t".join([
            r.query_id, r.method, repr(r.ai_confidence), "1" if r.ai_correct else "0",
            r.user_id, "1" if r.accepted else "0",
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trial_log(path: str | Path) -> TrialLog:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t") != list(TRIAL_LOG_FIELDS):
        raise ValueError(f"{path}: expected header {' '.join(TRIAL_LOG_FIELDS)}")
    rows = []
    for ln in lines[1:]:
        qid, method, conf, correct, user, accepted = ln.split("\t")
        rows.append(TrialResponse(
            query_id=qid, method=method, ai_confidence=float(conf),
            ai_correct=correct == "1", user_id=user, accepted=accepted == "1"))
    return TrialLog(rows)


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    ai_accuracy: float | None  # over queries with confidence >= threshold, percent
    fraction_handled: float  # share of queries the AI answers itself
    human_accuracy: float | None  # over responses on deferred queries, percent
    team_accuracy: float | None  # defined only when both sides are

    def csv_cells(self) -> list[str]:
        def cell(v, fmt):
            return "n/a" if v is None else fmt.format(v)
        return [f"{self.threshold:.2f}", cell(self.ai_accuracy, "{:.2f}"),
                f"{self.fraction_handled:.4f}", cell(self.human_accuracy, "{:.2f}"),
                cell(self.team_accuracy, "{:.2f}")]


def _team_row(log: TrialLog, display_threshold: float, cut: float
              ) -> tuple[SweepRow, Fraction | None]:
    trials = log.trials
    if not trials:
        raise ValueError("empty trial log")
    handled = [t for t in trials if t.ai_confidence >= cut]
    deferred = [t for t in trials if t.ai_confidence < cut]
    fraction = len(handled) / len(trials)
    ai_acc = None
    if handled:
        ai_acc = 100.0 * sum(t.ai_correct for t in handled) / len(handled)
    human_acc = None
    responses = [r for t in deferred for r in t.responses]
    if responses:
        human_acc = 100.0 * sum(r.human_correct for r in responses) / len(responses)
    team = None
    exact = None
    if ai_acc is not None and human_acc is not None:
        team = fraction * ai_acc + (1.0 - fraction) * human_acc
        # exact rational form of the same mix, for ulp-free tie-breaking
        exact = 100 * (Fraction(sum(t.ai_correct for t in handled), len(trials))
                       + Fraction(len(deferred), len(trials))
                       * Fraction(sum(r.human_correct for r in responses), len(responses)))
    return SweepRow(threshold=display_threshold, ai_accuracy=ai_acc,
                    fraction_handled=fraction, human_accuracy=human_acc,
                    team_accuracy=team), exact


def team_accuracy(log: TrialLog, threshold: float) -> SweepRow:
    """Split the log at the confidence threshold and mix the two accuracies."""
    return _team_row(log, threshold, threshold)[0]


@dataclass
class SweepTable:
    rows: tuple[SweepRow, ...]
    optimal: SweepRow | None

    def to_csv(self) -> str:
        header = ("threshold,ai_accuracy_at_or_above,fraction_handled_by_ai,"
                  "human_accuracy_below,team_accuracy")
        return "\n".join([header] + [",".join(r.csv_cells()) for r in self.rows]) + "\n"


def threshold_sweep(log: TrialLog, thresholds: Sequence[float] | None = None) -> SweepTable:
    """One row per threshold plus the team-optimal row (ties to smallest T).

    The default grid is 0.05..0.95 in 0.05 steps plus both endpoints; the
    top endpoint is evaluated as the humans-handle-everything split (the AI
    side is empty even for confidence exactly 1.0).
    """
    if thresholds is None:
        thresholds = (0.0,) + SWEEP_GRID + (1.0,)
    rows = []
    exacts = []
    for t in sorted(thresholds):
        cut = math.nextafter(1.0, 2.0) if t >= 1.0 else t
        row, exact = _team_row(log, t, cut)
        rows.append(row)
        exacts.append(exact)
    defined = [(r, e) for r, e in zip(rows, exacts) if e is not None]
    optimal = None
    if defined:
        best = max(e for _, e in defined)
        optimal = min((r for r, e in defined if e == best), key=lambda r: r.threshold)
    return SweepTable(rows=tuple(rows), optimal=optimal)


def difficulty_level(ai_correct: bool, confidence: float) -> str:
    """Difficulty bucket from AI correctness and confidence.

    Reproduces the published bucket table verbatim, including the
    counter-intuitive row for correct predictions: low-confidence correct
    queries are Easy. Confidence 1.0 falls in the top interval.
    """
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence must be in [0, 1], got {confidence}")
    if confidence < 0.35:
        band = 0
    elif confidence < 0.75:
        band = 1
    else:
        band = 2
    if ai_correct:
        return DIFFICULTY_LEVELS[(0, 1, 2)[band]]
    return DIFFICULTY_LEVELS[(2, 1, 0)[band]]


@dataclass
class UserAccuracySummary:
    per_user: dict[str, float]
    excluded_users: tuple[str, ...]
    per_method: dict[str, tuple[float, float, int]]  # mean%, std%, retained users

    def retained(self) -> dict[str, float]:
        dropped = set(self.excluded_users)
        return {u: a for u, a in self.per_user.items() if u not in dropped}


def user_accuracy(log: TrialLog, exclusion_threshold: float = USER_EXCLUSION_THRESHOLD
                  ) -> UserAccuracySummary:
    """Per-user mean correctness with near-chance users dropped from aggregates.

    A user scoring at or below the exclusion threshold is excluded. Method
    aggregates weight retained users equally and report mean and sample
    deviation of their percent accuracies.
    """
    by_user: dict[str, list[TrialResponse]] = {}
    for r in log.rows:
        by_user.setdefault(r.user_id, []).append(r)
    per_user = {u: sum(r.human_correct for r in rs) / len(rs)
                for u, rs in sorted(by_user.items())}
    excluded = tuple(u for u, acc in per_user.items() if acc <= exclusion_threshold)
    dropped = set(excluded)
    per_method: dict[str, tuple[float, float, int]] = {}
    for method in log.methods():
        scores = []
        for u, rs in sorted(by_user.items()):
            if u in dropped:
                continue
            mine = [r for r in rs if r.method == method]
            if mine:
                scores.append(100.0 * sum(r.human_correct for r in mine) / len(mine))
        if scores:
            mean = sum(scores) / len(scores)
            if len(scores) > 1:
                std = math.sqrt(sum((s - mean) ** 2 for s in scores) / (len(scores) - 1))
            else:
                std = 0.0
            per_method[method] = (mean, std, len(scores))
    return UserAccuracySummary(per_user=per_user, excluded_users=excluded,
                               per_method=per_method)


@dataclass
class AcceptRejectBreakdown:
    per_method: dict[str, tuple[float, float]]  # accept%, reject%
    per_difficulty: dict[str, tuple[float, float]]

    def to_csv(self) -> str:
        lines = ["group,key,accept_percent,reject_percent"]
        for key, (acc, rej) in sorted(self.per_method.items()):
            lines.append(f"method,{key},{acc:.2f},{rej:.2f}")
        for key in DIFFICULTY_LEVELS:
            if key in self.per_difficulty:
                acc, rej = self.per_difficulty[key]
                lines.append(f"difficulty,{key},{acc:.2f},{rej:.2f}")
        return "\n".join(lines) + "\n"


def accept_reject_breakdown(log: TrialLog) -> AcceptRejectBreakdown:
    """Accept/reject response rates per method and per difficulty level."""
    def rates(rows: list[TrialResponse]) -> tuple[float, float]:
        accepts = sum(r.accepted for r in rows)
        return (100.0 * accepts / len(rows), 100.0 * (len(rows) - accepts) / len(rows))

    per_method = {m: rates([r for r in log.rows if r.method == m]) for m in log.methods()}
    per_difficulty = {}
    for level in DIFFICULTY_LEVELS:
        rows = [r for r in log.rows
                if difficulty_level(r.ai_correct, r.ai_confidence) == level]
        if rows:
            per_difficulty[level] = rates(rows)
    return AcceptRejectBreakdown(per_method=per_method, per_difficulty=per_difficulty)


def _midranks(pooled: Sequence[float]) -> list[float]:
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        mid = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = mid
        i = j + 1
    return ranks


def _u_statistic(ranks_a: Sequence[float], n: int) -> float:
    return sum(ranks_a) - n * (n + 1) / 2.0


EXACT_ENUMERATION_LIMIT = 8


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test with midrank ties.

    Returns (U, p) where U counts pairs with a > b plus half the ties, so
    U(a, b) + U(b, a) = len(a) * len(b). The p-value is exact (enumeration
    over all labelings of the pooled sample) when both sides have at most
    8 observations, and otherwise uses the normal approximation with tie
    correction and a 0.5 continuity correction.
    """
    a = list(a)
    b = list(b)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("both samples must be nonempty")
    pooled = a + b
    ranks = _midranks(pooled)
    u = _u_statistic(ranks[:n], n)
    center = n * m / 2.0
    if n <= EXACT_ENUMERATION_LIMIT and m <= EXACT_ENUMERATION_LIMIT:
        # Midranks and U are exact multiples of 0.5 in floating point, so
        # the tail comparison below is exact.
        dev = abs(u - center)
        hits = 0
        total = 0
        for chosen in combinations(range(n + m), n):
            total += 1
            u_perm = _u_statistic([ranks[i] for i in chosen], n)
            if abs(u_perm - center) >= dev:
                hits += 1
        return u, hits / total
    big_n = n + m
    tie_counts: dict[float, int] = {}
    for v in pooled:
        tie_counts[v] = tie_counts.get(v, 0) + 1
    tie_term = sum(t ** 3 - t for t in tie_counts.values())
    var = (n * m / 12.0) * ((big_n + 1) - tie_term / (big_n * (big_n - 1)))
    if var <= 0:
        return u, 1.0
    z = max(abs(u - center) - 0.5, 0.0) / math.sqrt(var)
    p = math.erfc(z / math.sqrt(2.0))
    return u, min(p, 1.0)
