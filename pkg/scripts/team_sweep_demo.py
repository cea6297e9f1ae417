"""Simulate an accept/reject study and sweep the confidence threshold.

A configurable AI (accuracy rising with confidence) answers everything above
threshold T; simulated users judge the rest. Prints the sweep table and the
optimal operating point.

Usage: python scripts/team_sweep_demo.py [--queries 2000] [--ai-skill 0.8]
"""

from __future__ import annotations

import argparse

import numpy as np

from corrxai.teams import (TrialLog, TrialResponse, accept_reject_breakdown,
                           threshold_sweep, user_accuracy)


def simulate(rng, n_queries, ai_skill, user_skill, users_per_query):
    rows = []
    for i in range(n_queries):
        confidence = float(rng.integers(1, 21)) / 20.0
        ai_correct = bool(rng.uniform() < 0.25 + ai_skill * 0.75 * confidence)
        for u in range(users_per_query):
            # users are likelier to agree with confident, correct AIs
            p_accept = user_skill if ai_correct else 1.0 - user_skill
            p_accept = 0.5 + (p_accept - 0.5) * (0.5 + confidence / 2)
            rows.append(TrialResponse(
                query_id=f"q{i:05d}", method="sim",
                ai_confidence=confidence, ai_correct=ai_correct,
                user_id=f"user{(i * users_per_query + u) % 60:02d}",
                accepted=bool(rng.uniform() < p_accept)))
    return TrialLog(rows)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--queries", type=int, default=2000)
    parser.add_argument("--ai-skill", type=float, default=0.8)
    parser.add_argument("--user-skill", type=float, default=0.75)
    parser.add_argument("--users-per-query", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    log = simulate(rng, args.queries, args.ai_skill, args.user_skill,
                   args.users_per_query)
    table = threshold_sweep(log)
    print(table.to_csv(), end="")
    if table.optimal:
        print(f"\noptimal threshold T*={table.optimal.threshold:.2f} "
              f"team={table.optimal.team_accuracy:.2f}%")

    summary = user_accuracy(log)
    mean, std, n = summary.per_method["sim"]
    print(f"user accuracy: {mean:.2f} +/- {std:.2f} over {n} retained users "
          f"({len(summary.excluded_users)} excluded)")
    breakdown = accept_reject_breakdown(log)
    for level, (acc, rej) in breakdown.per_difficulty.items():
        print(f"  {level:>6}: accept {acc:5.2f}% / reject {rej:5.2f}%")


if __name__ == "__main__":
    main()
