"""Greedy knapsack oracle that turns per-arm scores into a configuration."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

ALPHA_GREEDY = 1.0 - 1.0 / math.e
MAX_EXHAUSTIVE_ARMS = 20
PAIR_SEED_LIMIT = 40


@dataclass(frozen=True)
class ScoredArm:
    arm_id: str
    score: float
    memory_cost: float
    key_columns: tuple = ()
    include_columns: frozenset = frozenset()
    query_origins: frozenset = frozenset()
    # template id -> whether this arm covers that template
    is_covering: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.memory_cost < 0:
            raise ValueError(f"arm {self.arm_id}: negative memory cost")

    def covers(self, template_id) -> bool:
        return bool(self.is_covering.get(template_id, False))


def _is_prefix(short: tuple, long: tuple) -> bool:
    return len(short) <= len(long) and tuple(long[: len(short)]) == tuple(short)


def _shadowed(arm: ScoredArm, chosen: ScoredArm) -> bool:
    if not arm.key_columns or not chosen.key_columns:
        return False
    if tuple(arm.key_columns) == tuple(chosen.key_columns):
        return arm.include_columns <= chosen.include_columns
    return len(arm.key_columns) < len(chosen.key_columns) and _is_prefix(
        arm.key_columns, chosen.key_columns
    )


def filter_step(
    selected: Iterable[ScoredArm],
    remaining: Sequence[ScoredArm],
    residual_budget: float,
) -> list:
    """Drop arms that no longer fit, are prefix-shadowed, or serve a covered query."""
    selected = list(selected)
    covered = {q for s in selected for q in s.query_origins if s.covers(q)}
    kept = []
    for arm in remaining:
        if arm.memory_cost > residual_budget:
            continue
        if any(_shadowed(arm, s) for s in selected):
            continue
        if arm.query_origins and len(arm.query_origins) == 1:
            (origin,) = arm.query_origins
            if origin in covered:
                continue
        kept.append(arm)
    return kept


def _admissible(arm: ScoredArm, chosen: list, residual: float, filtering: bool) -> bool:
    if arm.memory_cost > residual:
        return False
    if not filtering:
        return True
    return bool(filter_step(chosen, [arm], residual))


def _greedy_pass(order: Sequence[ScoredArm], budget: float, seed=(), filtering=True):
    # one sweep in a fixed priority order equals repeated pick+filter, because
    # every filter rule is monotone in the chosen set and the residual budget
    chosen: list = []
    residual = float(budget)
    for arm in seed:
        if not _admissible(arm, chosen, residual, filtering):
            return None
        chosen.append(arm)
        residual -= arm.memory_cost
    taken = {a.arm_id for a in chosen}
    for arm in order:
        if arm.arm_id in taken:
            continue
        if _admissible(arm, chosen, residual, filtering):
            chosen.append(arm)
            residual -= arm.memory_cost
    return chosen


def _density(arm: ScoredArm) -> float:
    return math.inf if arm.memory_cost == 0 else arm.score / arm.memory_cost


def greedy_select(
    arms: Sequence[ScoredArm],
    budget: float,
    filtering: bool = True,
    pair_limit: int = PAIR_SEED_LIMIT,
) -> list:
    """Return selected arm ids in pick order.

    Negative-score arms are pruned, then three greedy sweeps compete and the
    highest total score wins:

    * by score, the highest available score first;
    * by score per byte;
    * by score per byte after fixing every admissible pair of arms as a
      seed (only when at most ``pair_limit`` arms survive pruning).  With
      the candidate pool restricted to arms scoring no more than the weaker
      seed, this is the classic partial-enumeration scheme and guarantees at
      least 2/3 of the knapsack optimum, above ``1 - 1/e``.

    With ``filtering`` the prefix/covering/residual-budget rules of
    ``filter_step`` are applied after each pick.  Without filtering and with
    equal memory costs only the score sweep runs.  Ties go to the lowest arm id.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    pool = [a for a in arms if a.score >= 0]
    if not pool:
        return []
    by_score = sorted(pool, key=lambda a: (-a.score, a.arm_id))
    by_density = sorted(pool, key=lambda a: (-_density(a), -a.score, a.arm_id))

    if not filtering and len({a.memory_cost for a in pool}) == 1:
        # equal costs make this a cardinality constraint, where score order is exact
        return [a.arm_id for a in _greedy_pass(by_score, budget, filtering=False)]
    candidates = [
        _greedy_pass(by_score, budget, filtering=filtering),
        _greedy_pass(by_density, budget, filtering=filtering),
    ]
    if len(pool) <= pair_limit:
        for i, first in enumerate(by_score):
            for second in by_score[i + 1 :]:
                floor = second.score
                rest = [a for a in by_density if a.score <= floor]
                run = _greedy_pass(rest, budget, seed=(first, second), filtering=filtering)
                if run is not None:
                    candidates.append(run)
        for single in by_score:
            rest = [a for a in by_density if a.score <= single.score]
            run = _greedy_pass(rest, budget, seed=(single,), filtering=filtering)
            if run is not None:
                candidates.append(run)

    best, best_value = [], -math.inf
    for run in candidates:
        value = math.fsum(a.score for a in run)
        if value > best_value:
            best, best_value = run, value
    return [a.arm_id for a in best]


def total_score(arms: Sequence[ScoredArm], chosen: Iterable[str]) -> float:
    by_id = {a.arm_id: a for a in arms}
    return math.fsum(by_id[i].score for i in chosen)


def exhaustive_best(arms: Sequence[ScoredArm], budget: float) -> tuple:
    """Best budget-feasible subset by summed score; returns (value, ids)."""
    if len(arms) > MAX_EXHAUSTIVE_ARMS:
        raise ValueError(f"{len(arms)} arms exceeds exhaustive limit {MAX_EXHAUSTIVE_ARMS}")
    best_value, best_ids = 0.0, ()
    for r in range(1, len(arms) + 1):
        for combo in itertools.combinations(arms, r):
            if math.fsum(a.memory_cost for a in combo) > budget:
                continue
            value = math.fsum(a.score for a in combo)
            if value > best_value:
                best_value, best_ids = value, tuple(a.arm_id for a in combo)
    return best_value, best_ids


def verify_approximation(arms: Sequence[ScoredArm], budget: float) -> float:
    """Ratio of greedy value to the exhaustive optimum (1.0 when both are 0)."""
    if len(arms) > MAX_EXHAUSTIVE_ARMS:
        raise ValueError(f"{len(arms)} arms exceeds exhaustive limit {MAX_EXHAUSTIVE_ARMS}")
    opt, _ = exhaustive_best(arms, budget)
    got = total_score(arms, greedy_select(arms, budget, filtering=False))
    if opt <= 0:
        return 1.0
    return got / opt
