import math
from pathlib import Path

import pytest

from mabtune.domain import Column, QueryInstance, QueryTemplate, Schema, Table
from mabtune.sim import CostModelParams, DbState

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


def small_schema() -> Schema:
    return Schema(
        (
            Table("t", 100_000, (Column("a"), Column("b"), Column("c"), Column("d")), 64.0),
            Table("u", 10_000, (Column("x"), Column("y")), 32.0),
        )
    )


def select(tid, preds, payload=(), tables=None):
    preds = tuple(preds.items())
    if tables is None:
        tables = tuple(sorted({c.split(".")[0] for c, _ in preds} | {c.split(".")[0] for c in payload}))
    return QueryTemplate(tid, "select", tables, preds, tuple(payload))


def instance(tpl, seq=0, rows=None):
    return QueryInstance(tpl, tpl.predicates, tpl.rows_affected if rows is None else rows, seq)


QUIET = CostModelParams(noise_cv=0.0)


@pytest.fixture
def schema():
    return small_schema()


@pytest.fixture
def db(schema):
    return DbState(schema=schema, cost=QUIET)


def close(a, b, tol=1e-9):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


def random_trace(rng):
    """A noisy round on a random configuration, with a partly warmed observation cache.

    Returns (trace, db, cache, templates).
    """
    import numpy as np

    from mabtune.domain import IndexCandidate
    from mabtune.sim import ObservationCache, execute, materialise

    schema = small_schema()
    cols = {"t": ["t.a", "t.b", "t.c", "t.d"], "u": ["u.x", "u.y"]}
    cost = CostModelParams(
        noise_cv=float(rng.uniform(0, 0.5)),
        misestimate_prob=float(rng.uniform(0, 0.5)),
        row_wise_threshold=int(rng.integers(1, 400)),
    )
    db = DbState(schema, cost, rng_seed=int(rng.integers(1 << 30)))
    if rng.random() < 0.5:
        db.plan_regressions = {"t.a": float(rng.uniform(0, 0.05))}
    config = {}
    for _ in range(int(rng.integers(0, 5))):
        table = "t" if rng.random() < 0.7 else "u"
        key = tuple(rng.choice(cols[table], int(rng.integers(1, 3)), replace=False))
        rest = [c for c in cols[table] if c not in key]
        inc = tuple(rest[: int(rng.integers(0, 2))]) if rest else ()
        cand = IndexCandidate.build(schema, table, key, inc)
        config[cand.arm_id] = cand
    materialise(db, list(config.values()))

    templates = {}
    queries = []
    for i in range(int(rng.integers(1, 8))):
        kind = rng.choice(["select", "select", "update", "insert", "delete"])
        table = "t" if rng.random() < 0.7 else "u"
        if kind == "select":
            preds = {c: float(rng.uniform(0.001, 0.5)) for c in rng.choice(cols[table], int(rng.integers(1, 3)), replace=False)}
            if rng.random() < 0.3:
                preds["u.x" if table == "t" else "t.a"] = 0.1
            tpl = select(f"s{i}", preds, payload=(cols[table][-1],) if cols[table][-1] not in preds else ())
        else:
            assigned = (cols[table][0],) if kind == "update" else ()
            tpl = QueryTemplate(f"w{i}", str(kind), (table,), (), assigned, int(rng.integers(1, 500)))
        templates[tpl.template_id] = tpl
        queries.append(instance(tpl, i))

    cache = ObservationCache(window=float(rng.integers(1, 5)))
    if rng.random() < 0.5:
        warm = DbState(schema, cost, rng_seed=1)
        cache.record(execute(warm, queries, round_no=int(rng.integers(0, 3))))
    trace = execute(db, queries, round_no=3)
    cache.record(trace)
    return trace, db, cache, templates


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
