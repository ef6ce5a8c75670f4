"""Hindsight baselines: brute-force fixed configurations and alpha-regret."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import QueryStore, generate_arms
from .oracle import ALPHA_GREEDY
from .sim import DbState, execute, materialise

MAX_BRUTE_FORCE_ARMS = 20


@dataclass
class BruteForceResult:
    config: tuple  # arm ids of the best fixed configuration
    exc_series: list  # per-round C_exc under it
    total_series: list  # per-round C_exc + C_cre (creation in round 1 only)
    creation_time: float
    n_arms: int
    n_configs: int
    candidates: list = field(default_factory=list)

    @property
    def total_exc(self) -> float:
        return math.fsum(self.exc_series)


def arm_universe(exp, rounds: Sequence) -> list:
    """Every candidate the tuner could ever generate for this workload."""
    store = QueryStore()
    for r, batch in enumerate(rounds):
        store.ingest(batch, r)
    qoi = store.select_qoi(len(rounds), math.inf)
    return generate_arms(qoi, exp.schema, exp.tuner.max_key_width, exp.tuner.arm_cap)


class _Replayer:
    """Noise-free per-query costs, memoised by the indices relevant to each query."""

    def __init__(self, exp, seed: int, rounds: Sequence):
        self.db = exp.make_db(seed, exp.cost.noiseless())
        self.db.plan_regressions = dict(exp.plan_regressions)
        self.rounds = [list(b) for b in rounds]
        self.memo: dict = {}

    def query_time(self, q, config: Sequence) -> float:
        tables = set(q.template.tables)
        relevant = tuple(sorted(c.arm_id for c in config if c.table in tables))
        key = (q.seq, q.template_id, q.selectivities, relevant)
        hit = self.memo.get(key)
        if hit is None:
            by_id = {c.arm_id: c for c in config}
            materialise(self.db, [by_id[i] for i in relevant])
            hit = execute(self.db, [q]).execution_time
            self.memo[key] = hit
        return hit

    def round_exc(self, r: int, config: Sequence) -> float:
        return math.fsum(self.query_time(q, config) for q in self.rounds[r])

    def creation(self, new: Sequence) -> float:
        materialise(self.db, [])
        return sum(materialise(self.db, list(new)).values())


def brute_force_optimal(exp, seed: int, rounds: Optional[Sequence] = None) -> BruteForceResult:
    """Best budget-feasible fixed configuration in hindsight (noise off)."""
    rounds = exp.rounds(seed) if rounds is None else rounds
    arms = arm_universe(exp, rounds)
    if len(arms) > MAX_BRUTE_FORCE_ARMS:
        raise ValueError(f"arm universe has {len(arms)} candidates, limit {MAX_BRUTE_FORCE_ARMS}")
    budget = exp.tuner.memory_budget
    rep = _Replayer(exp, seed, rounds)
    best = None
    n_configs = 0
    for k in range(len(arms) + 1):
        for combo in itertools.combinations(arms, k):
            if sum(a.est_size_bytes for a in combo) > budget:
                continue
            n_configs += 1
            total = math.fsum(rep.round_exc(r, combo) for r in range(len(rounds)))
            ids = tuple(sorted(a.arm_id for a in combo))
            # ties go to the smaller configuration, then lexicographic ids
            if best is None or total < best[0] - 1e-12:
                best = (total, ids, combo)
    _, ids, combo = best
    exc = [rep.round_exc(r, combo) for r in range(len(rounds))]
    cre = rep.creation(combo)
    totals = [e + (cre if r == 0 else 0.0) for r, e in enumerate(exc)]
    return BruteForceResult(ids, exc, totals, cre, len(arms), n_configs, list(arms))


def replay_rewards(exp, seed: int, configs: Sequence, rounds: Optional[Sequence] = None) -> list:
    """Noise-free super-arm reward of each round's configuration.

    ``configs`` holds one sequence of IndexCandidate per round. A round's
    reward is C_exc(empty) - C_exc(config) - C_cre(newly built indices).
    """
    rounds = exp.rounds(seed) if rounds is None else rounds
    if len(configs) != len(rounds):
        raise ValueError(f"{len(configs)} configurations for {len(rounds)} rounds")
    rep = _Replayer(exp, seed, rounds)
    out = []
    prev: set = set()
    for r, config in enumerate(configs):
        config = list(config)
        new = [c for c in config if c.arm_id not in prev]
        gain = rep.round_exc(r, []) - rep.round_exc(r, config)
        out.append(gain - rep.creation(new))
        prev = {c.arm_id for c in config}
    return out


@dataclass(frozen=True)
class RegretSeries:
    per_round: np.ndarray
    cumulative: np.ndarray

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if len(self.cumulative) else 0.0


def compute_alpha_regret(
    mab_rewards: Sequence[float], oracle_rewards: Sequence[float], alpha: float = ALPHA_GREEDY
) -> RegretSeries:
    mab = np.asarray(mab_rewards, dtype=float)
    opt = np.asarray(oracle_rewards, dtype=float)
    if mab.shape != opt.shape:
        raise ValueError(f"length mismatch: {mab.shape[0]} MAB rounds vs {opt.shape[0]} oracle rounds")
    per = alpha * opt - mab
    return RegretSeries(per, np.cumsum(per))


def run_alpha_regret(
    exp, seed: int, records: Sequence, rounds: Optional[Sequence] = None, alpha: float = ALPHA_GREEDY
) -> tuple:
    """alpha-regret of a tuner run against the brute-force fixed configuration.

    Both sides are replayed with noise off. Returns (RegretSeries, BruteForceResult).
    """
    rounds = exp.rounds(seed) if rounds is None else rounds
    bf = brute_force_optimal(exp, seed, rounds)
    by_id = {c.arm_id: c for c in bf.candidates}
    missing = {i for r in records for i in r.config} - set(by_id)
    if missing:
        raise ValueError(f"run used arms outside the candidate universe: {sorted(missing)}")
    mab = replay_rewards(exp, seed, [[by_id[i] for i in r.config] for r in records], rounds)
    best = [by_id[i] for i in bf.config]
    opt = replay_rewards(exp, seed, [best] * len(rounds), rounds)
    return compute_alpha_regret(mab, opt, alpha), bf
