"""Reproducible query streams: static, shifting, random and HTAP rounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .domain import Column, QueryInstance, QueryTemplate, Schema, Table, qualify

MODES = ("static", "shifting", "random", "htap", "htap_dynamic")
TRANSACTION_KINDS = ("new_order", "payment", "order_status", "delivery", "stock_level")
# 44/44/4/4/4 percent of one transactional set
TRANSACTION_MIX = {"new_order": 11, "payment": 11, "order_status": 1, "delivery": 1, "stock_level": 1}
PRESET_POOL_SIZES = {"tpch": 22, "ssb": 13, "tpcds": 99, "imdb": 33}


@dataclass(frozen=True)
class WorkloadSpec:
    mode: str = "static"
    rounds: int = 25
    round_size: float = 1.0
    groups: int = 4
    phase: int = 20
    tar: float = 0.0
    tar_max: int = 5
    seed: int = 0
    memory_budget: float = math.inf
    pool_size: Optional[int] = None
    selectivity_cv: float = 0.0
    zipf: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown workload mode {self.mode!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.round_size <= 0:
            raise ValueError("round_size must be positive")
        if self.tar < 0:
            raise ValueError("tar must be non-negative")
        if self.mode == "shifting" and self.groups * self.phase != self.rounds:
            raise ValueError(
                f"shifting needs groups*phase == rounds ({self.groups}*{self.phase} != {self.rounds})"
            )
        if self.memory_budget < 0:
            raise ValueError("memory_budget must be non-negative")

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> "WorkloadSpec":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown workload keys: {sorted(unknown)}")
        if "memory_budget" in data and data["memory_budget"] is None:
            data["memory_budget"] = math.inf
        return cls(**data)


@dataclass
class Workload:
    """Templates plus, for HTAP, the statements of each transaction kind."""

    schema: Schema
    templates: list
    transactions: dict = field(default_factory=dict)  # kind -> [template ids]

    def template(self, template_id: str) -> QueryTemplate:
        for t in self.templates:
            if t.template_id == template_id:
                return t
        raise KeyError(template_id)

    @property
    def analytical(self) -> list:
        tx_ids = {i for ids in self.transactions.values() for i in ids}
        return [t for t in self.templates if t.kind == "select" and t.template_id not in tx_ids]

    def transactional_set_size(self) -> int:
        return sum(TRANSACTION_MIX[k] * len(self.transactions.get(k, ())) for k in TRANSACTION_KINDS)


def zipf_probabilities(n: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=float)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def instantiate_template(
    template: QueryTemplate,
    rng: np.random.Generator,
    schema: Optional[Schema] = None,
    selectivity_cv: float = 0.0,
    zipf: float = 0.0,
    seq: int = 0,
) -> QueryInstance:
    """Draw predicate constants for one execution of ``template``.

    With a Zipf exponent the constant's rank is Zipf-distributed over the
    column's distinct values and the instance selectivity scales with that
    value's share of the data (exponent 0 leaves the average unchanged).
    ``selectivity_cv`` adds mean-one lognormal jitter.
    """
    sels = []
    for col, avg in template.predicates:
        sel = avg
        if zipf > 0:
            n = schema.column(col).distinct_values if schema is not None else 1000
            n = max(1, min(n, 10_000))
            probs = zipf_probabilities(n, zipf)
            rank = int(rng.choice(n, p=probs))
            sel = avg * n * probs[rank]
        if selectivity_cv > 0:
            sigma = math.sqrt(math.log1p(selectivity_cv**2))
            sel *= math.exp(rng.normal(-0.5 * sigma * sigma, sigma))
        sels.append((col, float(min(max(sel, 1e-9), 1.0))))
    return QueryInstance(template, tuple(sels), template.rows_affected, seq)


def draw_constant_ranks(n_values: int, zipf: float, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Ranks of predicate constants, as used by ``instantiate_template``."""
    return rng.choice(n_values, size=draws, p=zipf_probabilities(n_values, zipf))


def shifting_groups(template_ids: Sequence[str], groups: int, rng: np.random.Generator) -> list:
    ids = list(template_ids)
    if len(ids) < groups:
        raise ValueError(f"{len(ids)} templates cannot form {groups} non-empty groups")
    order = rng.permutation(len(ids))
    parts = np.array_split(order, groups)
    out = [sorted(ids[i] for i in part) for part in parts]
    seen: set = set()
    for g in out:
        if seen & set(g):
            raise ValueError("shifting groups overlap")
        seen |= set(g)
    return out


def tar_schedule(spec: WorkloadSpec) -> list:
    """Per-round TAR; the dynamic mode climbs 0..tar_max then back down."""
    if spec.mode != "htap_dynamic":
        return [spec.tar] * spec.rounds
    levels = list(range(0, spec.tar_max + 1)) + list(range(spec.tar_max - 1, -1, -1))
    return [float(levels[min(r // spec.phase, len(levels) - 1)]) for r in range(spec.rounds)]


def _take(templates: Sequence[QueryTemplate], count: int, start: int) -> list:
    n = len(templates)
    return [templates[(start + i) % n] for i in range(count)]


def gen_workload(spec: WorkloadSpec, workload: Workload) -> list:
    """List of rounds, each a list of ``QueryInstance``."""
    rng = np.random.default_rng([spec.seed, 7919])
    pool = list(workload.analytical if spec.mode.startswith("htap") else workload.templates)
    pool = [t for t in pool if t.kind == "select"] or pool
    if spec.pool_size is not None:
        pool = pool[: spec.pool_size]
    if not pool:
        raise ValueError("workload has no templates")
    per_round = max(1, round(spec.round_size * len(pool)))
    rounds: list = []
    seq = 0

    def inst(t):
        nonlocal seq
        q = instantiate_template(t, rng, workload.schema, spec.selectivity_cv, spec.zipf, seq)
        seq += 1
        return q

    if spec.mode == "static":
        for r in range(spec.rounds):
            rounds.append([inst(t) for t in _take(pool, per_round, r * per_round)])
    elif spec.mode == "shifting":
        groups = shifting_groups([t.template_id for t in pool], spec.groups, rng)
        by_id = {t.template_id: t for t in pool}
        for r in range(spec.rounds):
            active = [by_id[i] for i in groups[r // spec.phase]]
            n = max(1, round(spec.round_size * len(active)))
            rounds.append([inst(t) for t in _take(active, n, 0)])
    elif spec.mode == "random":
        for r in range(spec.rounds):
            picks = rng.integers(0, len(pool), size=per_round)
            rounds.append([inst(pool[int(i)]) for i in picks])
    else:
        missing = [k for k in TRANSACTION_KINDS if not workload.transactions.get(k)]
        if missing and any(tar > 0 for tar in tar_schedule(spec)):
            raise ValueError(f"HTAP workload lacks transaction kinds {missing}")
        for tar in tar_schedule(spec):
            batch = [inst(t) for t in pool]
            for _ in range(int(tar)):
                for kind in TRANSACTION_KINDS:
                    for _ in range(TRANSACTION_MIX[kind]):
                        for tid in workload.transactions[kind]:
                            batch.append(inst(workload.template(tid)))
            rounds.append(batch)
    return rounds


def repeat_fraction(rounds: Sequence[Sequence[QueryInstance]]) -> list:
    """Share of each round's templates that also ran in the previous round."""
    out = []
    for prev, cur in zip(rounds, rounds[1:]):
        p = {q.template_id for q in prev}
        c = [q.template_id for q in cur]
        out.append(sum(t in p for t in c) / len(c) if c else 0.0)
    return out


def synthetic_schema(rng: np.random.Generator, n_tables: int = 6) -> Schema:
    """Desk-scale star-ish schema: 10^4..10^6 rows, 8..20 columns per table."""
    tables = []
    for i in range(n_tables):
        rows = int(10 ** rng.uniform(4, 6))
        ncols = int(rng.integers(8, 21))
        cols = tuple(
            Column(f"c{j}", float(rng.choice([4, 8, 8, 16, 32])), int(10 ** rng.uniform(1, 5)))
            for j in range(ncols)
        )
        tables.append(Table(f"t{i}", rows, cols))
    return Schema(tuple(tables))


def synthetic_templates(schema: Schema, n: int, rng: np.random.Generator) -> list:
    """Select templates with 1-3 predicates and a small payload on one or two tables."""
    out = []
    names = [t.name for t in schema.tables]
    for k in range(n):
        ntab = 1 if rng.random() < 0.7 else 2
        tabs = sorted(rng.choice(names, size=ntab, replace=False).tolist())
        preds, payload = [], []
        for tname in tabs:
            t = schema.table(tname)
            cols = [c.name for c in t.columns]
            chosen = rng.choice(cols, size=min(len(cols), int(rng.integers(2, 5))), replace=False)
            npred = int(rng.integers(1, min(3, len(chosen) - 1) + 1)) if len(chosen) > 1 else 1
            for c in chosen[:npred]:
                preds.append((qualify(tname, c), float(10 ** rng.uniform(-3, -0.7))))
            payload += [qualify(tname, c) for c in chosen[npred:]]
        out.append(QueryTemplate(f"q{k:02d}", "select", tuple(tabs), tuple(preds), tuple(payload)))
    return out


def synthetic_workload(seed: int, pool_size: int = 22, preset: Optional[str] = None) -> Workload:
    rng = np.random.default_rng([seed, 104729])
    if preset is not None:
        pool_size = PRESET_POOL_SIZES[preset]
    schema = synthetic_schema(rng)
    return Workload(schema, synthetic_templates(schema, pool_size, rng))


def workload_from_dict(data: Mapping, schema: Schema) -> Workload:
    templates = [QueryTemplate.from_dict(t) for t in data.get("templates", ())]
    for t in templates:
        t.validate(schema)
    ids = [t.template_id for t in templates]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate template ids")
    tx = {k: list(v) for k, v in (data.get("transactions") or {}).items()}
    unknown = set(tx) - set(TRANSACTION_KINDS)
    if unknown:
        raise ValueError(f"unknown transaction kinds {sorted(unknown)}")
    for kind, tids in tx.items():
        for tid in tids:
            if tid not in ids:
                raise ValueError(f"transaction {kind} references unknown template {tid}")
    return Workload(schema, templates, tx)
