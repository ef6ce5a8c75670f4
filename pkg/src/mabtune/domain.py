"""Schema, query templates, candidate indices and per-arm context vectors."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

QUERY_KINDS = ("select", "insert", "delete", "update")
ROW_POINTER_BYTES = 8
PART2_SLOTS = 3  # covering flag, size ratio, recent optimiser use
# squared norm bounds: part 1 (< 1.02), covering (1), size ratio (1), use ratio (1)
CONTEXT_NORMALISER = math.sqrt(1.02 + 1.0 + 1.0 + 1.0)


@dataclass(frozen=True)
class Column:
    name: str
    width_bytes: float = 8.0
    distinct_values: int = 1000

    def __post_init__(self):
        if self.width_bytes <= 0:
            raise ValueError(f"column {self.name}: width must be positive")
        if self.distinct_values < 1:
            raise ValueError(f"column {self.name}: distinct_values must be >= 1")


@dataclass(frozen=True)
class Table:
    name: str
    row_count: int
    columns: tuple
    row_width_bytes: Optional[float] = None

    def __post_init__(self):
        if self.row_count < 1:
            raise ValueError(f"table {self.name}: row_count must be >= 1")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"table {self.name}: duplicate column names")

    @property
    def row_width(self) -> float:
        if self.row_width_bytes is not None:
            return float(self.row_width_bytes)
        return float(sum(c.width_bytes for c in self.columns))

    @property
    def size_bytes(self) -> float:
        return self.row_count * self.row_width


def qualify(table: str, column: str) -> str:
    return f"{table}.{column}"


def split_column(qualified: str) -> tuple:
    table, _, column = qualified.partition(".")
    if not column:
        raise ValueError(f"column reference {qualified!r} is not table-qualified")
    return table, column


@dataclass(frozen=True)
class Schema:
    tables: tuple

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate table names")
        object.__setattr__(self, "_tables", {t.name: t for t in self.tables})
        cols = {}
        for t in self.tables:
            for c in t.columns:
                cols[qualify(t.name, c.name)] = c
        object.__setattr__(self, "_columns", cols)

    def table(self, name: str) -> Table:
        try:
            return self._tables[name]
        except KeyError:
            raise KeyError(f"unknown table {name!r}") from None

    def column(self, qualified: str) -> Column:
        try:
            return self._columns[qualified]
        except KeyError:
            raise KeyError(f"unknown column {qualified!r}") from None

    def has_column(self, qualified: str) -> bool:
        return qualified in self._columns

    @property
    def all_columns(self) -> list:
        return list(self._columns)

    @property
    def database_size(self) -> float:
        return float(sum(t.size_bytes for t in self.tables))

    @classmethod
    def from_dict(cls, data: Mapping) -> "Schema":
        tables = []
        for t in data["tables"]:
            cols = tuple(
                Column(c["name"], float(c.get("width", 8)), int(c.get("distinct", 1000)))
                if isinstance(c, Mapping)
                else Column(str(c))
                for c in t["columns"]
            )
            tables.append(Table(t["name"], int(t["rows"]), cols, t.get("row_width")))
        return cls(tuple(tables))

    def to_dict(self) -> dict:
        return {
            "tables": [
                {
                    "name": t.name,
                    "rows": t.row_count,
                    "row_width": t.row_width_bytes,
                    "columns": [
                        {"name": c.name, "width": c.width_bytes, "distinct": c.distinct_values}
                        for c in t.columns
                    ],
                }
                for t in self.tables
            ]
        }


@dataclass(frozen=True)
class QueryTemplate:
    """A parameterised statement.

    ``predicates`` maps qualified columns to average selectivity; ``payload``
    lists projected columns for selects and assigned columns for updates.
    DML templates touch exactly one table.
    """

    template_id: str
    kind: str
    tables: tuple
    predicates: tuple = ()  # ((qualified column, selectivity), ...)
    payload: tuple = ()
    rows_affected: int = 0

    def __post_init__(self):
        if self.kind not in QUERY_KINDS:
            raise ValueError(f"template {self.template_id}: unknown kind {self.kind!r}")
        if self.kind == "select" and not self.predicates:
            raise ValueError(f"select template {self.template_id} needs a predicate")
        for col, sel in self.predicates:
            if not 0.0 < sel <= 1.0:
                raise ValueError(f"template {self.template_id}: selectivity {sel} of {col}")
        if self.kind != "select" and len(self.tables) != 1:
            raise ValueError(f"DML template {self.template_id} must touch one table")

    @property
    def predicate_columns(self) -> tuple:
        return tuple(c for c, _ in self.predicates)

    def selectivity(self, column: str) -> float:
        return dict(self.predicates)[column]

    def columns_on(self, table: str) -> tuple:
        """Predicate columns then payload columns that live on ``table``."""
        prefix = table + "."
        preds = [c for c in self.predicate_columns if c.startswith(prefix)]
        extra = [c for c in self.payload if c.startswith(prefix) and c not in preds]
        return tuple(preds + extra)

    def validate(self, schema: Schema) -> None:
        for t in self.tables:
            schema.table(t)
        for c in list(self.predicate_columns) + list(self.payload):
            table, _ = split_column(c)
            if table not in self.tables:
                raise ValueError(f"template {self.template_id}: {c} not on a referenced table")
            schema.column(c)

    @classmethod
    def from_dict(cls, data: Mapping) -> "QueryTemplate":
        preds = data.get("predicates", {})
        if isinstance(preds, Mapping):
            preds = tuple((str(k), float(v)) for k, v in preds.items())
        else:
            preds = tuple((str(k), float(v)) for k, v in preds)
        tables = data.get("tables")
        if tables is None:
            tables = sorted({split_column(c)[0] for c, _ in preds} | {split_column(c)[0] for c in data.get("payload", ())} | ({data["table"]} if "table" in data else set()))
        return cls(
            template_id=str(data["id"]),
            kind=data.get("kind", "select"),
            tables=tuple(tables),
            predicates=preds,
            payload=tuple(data.get("payload", ())),
            rows_affected=int(data.get("rows", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.template_id,
            "kind": self.kind,
            "tables": list(self.tables),
            "predicates": {c: s for c, s in self.predicates},
            "payload": list(self.payload),
            "rows": self.rows_affected,
        }


@dataclass(frozen=True)
class QueryInstance:
    template: QueryTemplate
    selectivities: tuple  # ((qualified column, selectivity), ...)
    rows_affected: int = 0
    seq: int = 0

    @property
    def template_id(self) -> str:
        return self.template.template_id

    @property
    def kind(self) -> str:
        return self.template.kind

    def selectivity(self, column: str) -> float:
        return dict(self.selectivities)[column]

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "template": self.template_id,
            "selectivities": {c: s for c, s in self.selectivities},
            "rows": self.rows_affected,
        }


def index_arm_id(table: str, key_columns: Sequence[str], include_columns: Iterable[str]) -> str:
    short = lambda c: split_column(c)[1]  # noqa: E731
    ident = f"{table}({','.join(short(c) for c in key_columns)})"
    inc = sorted(short(c) for c in include_columns)
    if inc:
        ident += "+(" + ",".join(inc) + ")"
    return ident


def estimate_index_size(schema: Schema, table: str, key_columns, include_columns) -> float:
    t = schema.table(table)
    width = sum(schema.column(c).width_bytes for c in itertools.chain(key_columns, include_columns))
    return float(t.row_count * (width + ROW_POINTER_BYTES))


@dataclass(frozen=True)
class IndexCandidate:
    table: str
    key_columns: tuple
    include_columns: frozenset = frozenset()
    est_size_bytes: float = 0.0
    arm_id: str = ""
    materialised: bool = field(default=False, compare=False)
    query_origins: frozenset = field(default=frozenset(), compare=False)
    covering_for: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        if not self.key_columns:
            raise ValueError("index needs at least one key column")
        if len(set(self.key_columns)) != len(self.key_columns):
            raise ValueError(f"duplicate key columns in {self.key_columns}")
        if set(self.key_columns) & set(self.include_columns):
            raise ValueError("include columns overlap key columns")
        if self.est_size_bytes < 0:
            raise ValueError("negative size estimate")
        if not self.arm_id:
            object.__setattr__(
                self, "arm_id", index_arm_id(self.table, self.key_columns, self.include_columns)
            )

    @classmethod
    def build(cls, schema: Schema, table: str, key_columns, include_columns=()) -> "IndexCandidate":
        key_columns = tuple(key_columns)
        include_columns = frozenset(include_columns)
        return cls(
            table=table,
            key_columns=key_columns,
            include_columns=include_columns,
            est_size_bytes=estimate_index_size(schema, table, key_columns, include_columns),
        )

    @property
    def columns(self) -> frozenset:
        return frozenset(self.key_columns) | self.include_columns

    def covers(self, template: QueryTemplate) -> bool:
        needed = template.columns_on(self.table)
        return bool(needed) and set(needed) <= self.columns

    @property
    def is_covering(self) -> bool:
        return bool(self.covering_for)


def _template_of(obj) -> QueryTemplate:
    return obj.current() if isinstance(obj, TemplateRecord) else obj


def generate_arms(
    qoi: Sequence,
    schema: Schema,
    max_key_width: int = 3,
    arm_cap: int = 64,
) -> list:
    """Candidate indices from the predicates of the queries of interest.

    Per select template and table: every ordering of every predicate subset
    up to ``max_key_width`` columns.  Keys of the maximal length also get a
    variant that includes the remaining referenced columns, which makes it
    covering for that template.  Predicates are tried most selective first
    and each template contributes at most ``arm_cap`` arms.  Identical
    definitions from different templates are merged.
    """
    merged: dict = {}
    for item in qoi:
        tpl = _template_of(item)
        if tpl.kind != "select":
            continue
        produced = []
        for table in tpl.tables:
            preds = sorted(
                (c for c in tpl.predicate_columns if split_column(c)[0] == table),
                key=lambda c: (tpl.selectivity(c), c),
            )
            if not preds:
                continue
            referenced = set(tpl.columns_on(table))
            full_len = min(len(preds), max_key_width)
            for width in range(1, full_len + 1):
                for key in itertools.permutations(preds, width):
                    produced.append((table, key, frozenset()))
                    if width == full_len:
                        extra = frozenset(referenced - set(key))
                        if extra:
                            produced.append((table, key, extra))
        for table, key, inc in produced[:arm_cap]:
            cand = IndexCandidate.build(schema, table, key, inc)
            prev = merged.get(cand.arm_id)
            origins = {tpl.template_id}
            covering = {tpl.template_id} if cand.covers(tpl) else set()
            if prev is not None:
                origins |= prev.query_origins
                covering |= prev.covering_for
            merged[cand.arm_id] = replace(
                cand, query_origins=frozenset(origins), covering_for=frozenset(covering)
            )
    return [merged[k] for k in sorted(merged)]


@dataclass(frozen=True)
class ContextLayout:
    """Slot layout: one slot per schema column, then the three derived slots."""

    columns: tuple
    history: int = 10

    @classmethod
    def for_schema(cls, schema: Schema, history: int = 10) -> "ContextLayout":
        return cls(tuple(schema.all_columns), history)

    def __post_init__(self):
        object.__setattr__(self, "_slot", {c: i for i, c in enumerate(self.columns)})
        if self.history < 1:
            raise ValueError("history must be >= 1")

    @property
    def dim(self) -> int:
        return len(self.columns) + PART2_SLOTS

    @property
    def covering_slot(self) -> int:
        return len(self.columns)

    @property
    def size_slot(self) -> int:
        return len(self.columns) + 1

    @property
    def usage_slot(self) -> int:
        return len(self.columns) + 2

    def slot(self, column: str) -> int:
        return self._slot[column]


def build_context(
    arm: IndexCandidate,
    layout: ContextLayout,
    predicate_columns: Iterable[str],
    database_size: float,
    recent_uses: int = 0,
    materialised: Optional[bool] = None,
    normalise: bool = True,
) -> np.ndarray:
    """Context vector for one arm.

    Part 1 holds ``10**-j`` in the slot of the ``j``-th key column (1-based)
    when that column is a predicate of some query of interest.  Part 2 holds
    the covering flag, the estimated size over the database size (0 once
    built) and the fraction of the last ``layout.history`` rounds in which the
    optimiser used the index.
    """
    preds = set(predicate_columns)
    x = np.zeros(layout.dim)
    for j, col in enumerate(arm.key_columns, start=1):
        try:
            slot = layout.slot(col)
        except KeyError:
            raise ValueError(f"arm {arm.arm_id} references unknown column {col}") from None
        if col in preds:
            x[slot] = 10.0 ** (-j)
    for col in arm.include_columns:
        if col not in layout._slot:
            raise ValueError(f"arm {arm.arm_id} references unknown column {col}")
    built = arm.materialised if materialised is None else materialised
    x[layout.covering_slot] = 1.0 if arm.is_covering else 0.0
    x[layout.size_slot] = 0.0 if built else min(arm.est_size_bytes / database_size, 1.0)
    x[layout.usage_slot] = min(recent_uses, layout.history) / layout.history
    if normalise:
        x /= CONTEXT_NORMALISER
        assert np.linalg.norm(x) <= 1.0 + 1e-12
    return x


@dataclass
class TemplateRecord:
    template: QueryTemplate
    frequency: int
    first_seen: int
    last_seen: int
    selectivity_sums: dict = field(default_factory=dict)

    @property
    def template_id(self) -> str:
        return self.template.template_id

    def avg_selectivity(self, column: str) -> float:
        return self.selectivity_sums[column] / self.frequency

    def current(self) -> QueryTemplate:
        """The template with its selectivities replaced by running averages."""
        preds = tuple((c, self.avg_selectivity(c)) for c, _ in self.template.predicates)
        return replace(self.template, predicates=preds)


class QueryStore:
    """Template-level summary of every query seen so far."""

    def __init__(self):
        self.records: dict = {}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, template_id) -> bool:
        return template_id in self.records

    def ingest(self, queries: Iterable[QueryInstance], round_no: int) -> list:
        """Add or update templates; returns the ids first seen in this batch."""
        new_ids = []
        for q in queries:
            rec = self.records.get(q.template_id)
            if rec is None:
                rec = TemplateRecord(q.template, 0, round_no, round_no)
                self.records[q.template_id] = rec
                new_ids.append(q.template_id)
            rec.frequency += 1
            rec.last_seen = round_no
            for col, sel in q.selectivities:
                rec.selectivity_sums[col] = rec.selectivity_sums.get(col, 0.0) + sel
        return new_ids

    def select_qoi(self, round_no: int, window: Optional[float] = None) -> list:
        """Templates seen within ``window`` rounds, most frequent first."""
        if window is None or math.isinf(window):
            recs = list(self.records.values())
        else:
            recs = [r for r in self.records.values() if r.last_seen >= round_no - window]
        return sorted(recs, key=lambda r: (-r.frequency, r.template_id))

    def seen_in(self, round_no: int) -> list:
        return [r for r in self.records.values() if r.last_seen == round_no]
