"""Analytic stand-in for a DBMS: builds indices, picks access paths, times queries.

Every measured time is multiplied by independent mean-one lognormal noise,
and query totals are summed from the noisy components so that the trace
always decomposes exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .domain import IndexCandidate, QueryInstance, Schema, estimate_index_size


@dataclass(frozen=True)
class CostModelParams:
    scan_bytes_per_sec: float = 200e6
    seek_base_sec: float = 0.005
    lookup_penalty_per_row_sec: float = 5e-6
    build_bytes_per_sec: float = 50e6
    maint_row_update_sec: float = 2e-5
    maint_index_update_sec: float = 2e-5
    join_overhead_sec: float = 0.01
    row_wise_threshold: int = 100
    noise_cv: float = 0.1
    misestimate_prob: float = 0.0

    def __post_init__(self):
        for name in (
            "scan_bytes_per_sec",
            "seek_base_sec",
            "lookup_penalty_per_row_sec",
            "build_bytes_per_sec",
            "maint_row_update_sec",
            "maint_index_update_sec",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.join_overhead_sec < 0:
            raise ValueError("join_overhead_sec must be non-negative")
        if self.noise_cv < 0:
            raise ValueError("noise_cv must be non-negative")
        if not 0.0 <= self.misestimate_prob <= 1.0:
            raise ValueError("misestimate_prob must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> "CostModelParams":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown cost parameters: {sorted(unknown)}")
        return cls(**data)

    def noiseless(self) -> "CostModelParams":
        return CostModelParams(**{**asdict(self), "noise_cv": 0.0, "misestimate_prob": 0.0})


class StorageExceeded(ValueError):
    pass


@dataclass
class DbState:
    schema: Schema
    cost: CostModelParams = field(default_factory=CostModelParams)
    rng_seed: int = 0
    storage_ceiling: float = math.inf
    # leading key column -> extra seconds whenever an index led by it is used;
    # models plans the optimiser misjudges (e.g. a bad join order)
    plan_regressions: dict = field(default_factory=dict)
    materialised: dict = field(default_factory=dict)
    executions: int = 0
    builds: int = 0

    @property
    def used_bytes(self) -> float:
        return float(sum(i.est_size_bytes for i in self.materialised.values()))

    def indexes_on(self, table: str) -> list:
        return [self.materialised[k] for k in sorted(self.materialised) if self.materialised[k].table == table]

    def _rng(self, stream: str, counter: int) -> np.random.Generator:
        tag = sum(ord(c) * (i + 1) for i, c in enumerate(stream))
        return np.random.default_rng([self.rng_seed, tag, counter])


def noise_factor(rng: np.random.Generator, cv: float) -> float:
    if cv <= 0:
        return 1.0
    sigma = math.sqrt(math.log1p(cv * cv))
    return float(math.exp(rng.normal(-0.5 * sigma * sigma, sigma)))


def actual_index_size(schema: Schema, index: IndexCandidate) -> float:
    return estimate_index_size(schema, index.table, index.key_columns, index.include_columns)


def materialise(db: DbState, config: Iterable[IndexCandidate]) -> dict:
    """Make ``config`` the set of built indices; returns build seconds per new index."""
    wanted = {i.arm_id: i for i in config}
    size = sum(actual_index_size(db.schema, i) for i in wanted.values())
    if size > db.storage_ceiling:
        raise StorageExceeded(f"configuration needs {size:.0f} B > ceiling {db.storage_ceiling:.0f} B")
    for arm_id in [k for k in db.materialised if k not in wanted]:
        del db.materialised[arm_id]
    rng = db._rng("build", db.builds)
    db.builds += 1
    created = {}
    for arm_id in sorted(wanted):
        if arm_id in db.materialised:
            continue
        index = wanted[arm_id]
        real = actual_index_size(db.schema, index)
        secs = real / db.cost.build_bytes_per_sec * noise_factor(rng, db.cost.noise_cv)
        db.materialised[arm_id] = IndexCandidate(
            table=index.table,
            key_columns=index.key_columns,
            include_columns=index.include_columns,
            est_size_bytes=real,
            arm_id=index.arm_id,
            materialised=True,
        )
        created[arm_id] = secs
    return created


@dataclass(frozen=True)
class AccessPath:
    table: str
    index_id: Optional[str]  # None means full table scan
    estimated_cost: float
    leading_column: Optional[str] = None

    @property
    def is_scan(self) -> bool:
        return self.index_id is None


def full_scan_cost(db: DbState, table: str) -> float:
    t = db.schema.table(table)
    return t.row_count * t.row_width / db.cost.scan_bytes_per_sec


def seek_cost(db: DbState, query: QueryInstance, index: IndexCandidate) -> Optional[float]:
    """Estimated seek cost, or None when no key prefix matches a predicate."""
    preds = dict(query.selectivities)
    sel = 1.0
    matched = 0
    for col in index.key_columns:
        if col not in preds:
            break
        sel *= preds[col]
        matched += 1
    if matched == 0:
        return None
    t = db.schema.table(index.table)
    rows = sel * t.row_count
    needed = set(query.template.columns_on(index.table))
    if needed <= index.columns:
        width = sum(db.schema.column(c).width_bytes for c in index.columns)
        per_row = width / db.cost.scan_bytes_per_sec
    else:
        per_row = db.cost.lookup_penalty_per_row_sec
    return db.cost.seek_base_sec + rows * per_row


def candidate_paths(db: DbState, query: QueryInstance, table: str) -> list:
    paths = [AccessPath(table, None, full_scan_cost(db, table))]
    for index in db.indexes_on(table):
        cost = seek_cost(db, query, index)
        if cost is not None:
            paths.append(AccessPath(table, index.arm_id, cost, index.key_columns[0]))
    return sorted(paths, key=lambda p: (p.estimated_cost, p.index_id or ""))


def choose_access_path(db: DbState, query: QueryInstance, table: str, rng=None) -> AccessPath:
    """Cheapest estimated path; with ``misestimate_prob`` the runner-up instead."""
    paths = candidate_paths(db, query, table)
    if len(paths) > 1 and db.cost.misestimate_prob > 0 and rng is not None:
        if rng.random() < db.cost.misestimate_prob:
            return paths[1]
    return paths[0]


@dataclass
class TableAccess:
    table: str
    index_id: Optional[str]
    time: float

    @property
    def is_scan(self) -> bool:
        return self.index_id is None


@dataclass
class QueryTrace:
    seq: int
    template_id: str
    kind: str
    accesses: list
    other_time: float  # joins, row location, plan regressions
    maint_base: float  # C_im(q, empty): base-table write work
    maint_per_index: Optional[dict]  # None when maintenance was row-wise
    maint_total: float  # C_im(q, s)
    updated: tuple  # V(s, q)
    total_time: float

    @property
    def used(self) -> tuple:
        """U(s, q): indices the plan read from."""
        return tuple(a.index_id for a in self.accesses if a.index_id is not None)

    @property
    def index_wise(self) -> bool:
        return self.maint_per_index is not None

    def component_sum(self) -> float:
        return math.fsum([a.time for a in self.accesses] + [self.other_time, self.maint_total])


@dataclass
class ExecutionTrace:
    round: int
    queries: list
    creation_times: dict = field(default_factory=dict)

    @property
    def execution_time(self) -> float:
        return math.fsum(q.total_time for q in self.queries)

    @property
    def creation_time(self) -> float:
        return math.fsum(self.creation_times.values())

    def used_indices(self) -> set:
        return {i for q in self.queries for i in q.used}

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _run_select(db: DbState, q: QueryInstance, rng, cv: float):
    accesses = []
    regression = 0.0
    for table in q.template.tables:
        if not q.template.columns_on(table):
            path = AccessPath(table, None, full_scan_cost(db, table))
        else:
            path = choose_access_path(db, q, table, rng)
        secs = path.estimated_cost * noise_factor(rng, cv)
        accesses.append(TableAccess(table, path.index_id, secs))
        if path.leading_column is not None and path.leading_column in db.plan_regressions:
            regression += db.plan_regressions[path.leading_column]
    other = db.cost.join_overhead_sec * (len(q.template.tables) - 1)
    other = other * noise_factor(rng, cv) + regression * noise_factor(rng, cv)
    return accesses, other


def _run_dml(db: DbState, q: QueryInstance, rng, cv: float):
    (table,) = q.template.tables
    rows = q.rows_affected
    locate = 0.0 if q.kind == "insert" else db.cost.seek_base_sec * noise_factor(rng, cv)
    base = rows * db.cost.maint_row_update_sec * noise_factor(rng, cv)
    if q.kind == "update":
        assigned = set(q.template.payload)
        touched = [i for i in db.indexes_on(table) if i.columns & assigned]
    else:
        touched = db.indexes_on(table)
    per_index = {
        i.arm_id: rows * db.cost.maint_index_update_sec * noise_factor(rng, cv) for i in touched
    }
    total = math.fsum([base] + [per_index[k] for k in sorted(per_index)])
    index_wise = rows >= db.cost.row_wise_threshold
    return locate, base, (per_index if index_wise else None), total, tuple(sorted(per_index))


def execute(db: DbState, workload: Sequence[QueryInstance], round_no: int = 0) -> ExecutionTrace:
    """Run every query against the current configuration."""
    rng = db._rng("exec", db.executions)
    db.executions += 1
    cv = db.cost.noise_cv
    traces = []
    for q in workload:
        for t in q.template.tables:
            db.schema.table(t)
        if q.kind == "select":
            accesses, other = _run_select(db, q, rng, cv)
            base, per_index, maint_total, updated = 0.0, None, 0.0, ()
        else:
            other, base, per_index, maint_total, updated = _run_dml(db, q, rng, cv)
            accesses = []
        total = math.fsum([a.time for a in accesses] + [other, maint_total])
        traces.append(
            QueryTrace(
                seq=q.seq,
                template_id=q.template_id,
                kind=q.kind,
                accesses=accesses,
                other_time=other,
                maint_base=base,
                maint_per_index=per_index,
                maint_total=maint_total,
                updated=updated,
                total_time=total,
            )
        )
    return ExecutionTrace(round_no, traces)


@dataclass
class ObservationCache:
    """What the tuner has measured so far, keyed by (table, template).

    Supplies no-index baselines for queries that ran with indices.
    """

    window: float = math.inf
    full_scans: dict = field(default_factory=dict)  # (table, tpl) -> (round, secs)
    index_times: dict = field(default_factory=dict)  # (table, tpl) -> [(round, secs)]
    other_baseline: dict = field(default_factory=dict)  # tpl -> (round, secs)

    def record(self, trace: ExecutionTrace) -> None:
        r = trace.round
        for q in trace.queries:
            for a in q.accesses:
                key = (a.table, q.template_id)
                if a.is_scan:
                    self.full_scans[key] = (r, a.time)
                else:
                    self.index_times.setdefault(key, []).append((r, a.time))
            if not q.used:
                self.other_baseline[q.template_id] = (r, q.other_time)

    def _fresh(self, stamp: int, now: int) -> bool:
        return stamp >= now - self.window


def estimate_full_scan(
    cache: ObservationCache, db: DbState, table: str, template_id: str, now: int
) -> tuple:
    """No-index scan time for ``table`` in ``template_id``: (seconds, observed?)."""
    hit = cache.full_scans.get((table, template_id))
    if hit is not None and cache._fresh(hit[0], now):
        return hit[1], True
    times = [s for r, s in cache.index_times.get((table, template_id), ()) if cache._fresh(r, now)]
    if times:
        return max(times), True
    return full_scan_cost(db, table), False


def estimate_other_baseline(cache: ObservationCache, db: DbState, query: QueryTrace, template, now: int) -> float:
    hit = cache.other_baseline.get(query.template_id)
    if hit is not None and cache._fresh(hit[0], now):
        return hit[1]
    if query.kind == "select":
        return db.cost.join_overhead_sec * (len(template.tables) - 1)
    return query.other_time
