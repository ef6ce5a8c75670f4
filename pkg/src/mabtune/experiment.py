"""Experiment definitions, config loading and multi-seed runs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from .bandit import HyperParams
from .domain import IndexCandidate, Schema
from .sim import CostModelParams, DbState
from .tuner import AGENTS, TUNER_HYPER, RoundRecord, TunerConfig, new_tuner, run_round
from .workloads import Workload, WorkloadSpec, gen_workload, synthetic_workload, workload_from_dict


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Experiment:
    workload: Workload
    spec: WorkloadSpec
    cost: CostModelParams = field(default_factory=CostModelParams)
    tuner: TunerConfig = field(default_factory=TunerConfig)
    plan_regressions: Mapping = field(default_factory=dict)
    storage_ceiling: float = math.inf
    seeds: tuple = (0,)
    name: str = "experiment"

    @property
    def schema(self) -> Schema:
        return self.workload.schema

    def with_seed(self, seed: int) -> WorkloadSpec:
        return replace(self.spec, seed=seed)

    def rounds(self, seed: int) -> list:
        return gen_workload(self.with_seed(seed), self.workload)

    def make_db(self, seed: int, cost: Optional[CostModelParams] = None) -> DbState:
        return DbState(
            schema=self.schema,
            cost=cost or self.cost,
            rng_seed=seed,
            storage_ceiling=self.storage_ceiling,
            plan_regressions=dict(self.plan_regressions),
        )


@dataclass
class RunResult:
    seed: int
    agent: str
    records: list
    forget_rounds: list = field(default_factory=list)
    cumulative_rewards: dict = field(default_factory=dict)
    workload_log: list = field(default_factory=list)

    def total(self, part: str) -> float:
        return math.fsum(getattr(r, part) for r in self.records)

    @property
    def totals(self) -> dict:
        return {p: self.total(p) for p in ("c_rec", "c_cre", "c_exc", "c_total")}

    def series(self, part: str) -> list:
        return [getattr(r, part) for r in self.records]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "agent": self.agent,
            "totals": self.totals,
            "forget_rounds": list(self.forget_rounds),
            "cumulative_rewards": dict(sorted(self.cumulative_rewards.items())),
            "rounds": [r.to_dict() for r in self.records],
        }


@dataclass
class Report:
    name: str
    runs: dict = field(default_factory=dict)  # (agent, seed) -> RunResult

    def add(self, run: RunResult) -> None:
        self.runs[(run.agent, run.seed)] = run

    def merge(self, other: "Report") -> "Report":
        out = Report(self.name, dict(self.runs))
        out.runs.update(other.runs)
        return out

    def agents(self) -> list:
        return sorted({a for a, _ in self.runs})

    def seeds(self, agent: str) -> list:
        return sorted(s for a, s in self.runs if a == agent)

    def summary(self) -> dict:
        out = {}
        for agent in self.agents():
            runs = [self.runs[(agent, s)] for s in self.seeds(agent)]
            out[agent] = {
                part: float(np.mean([r.total(part) for r in runs]))
                for part in ("c_rec", "c_cre", "c_exc", "c_total")
            }
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "summary": self.summary(),
            "runs": [self.runs[k].to_dict() for k in sorted(self.runs)],
        }


def run_seed(
    exp: Experiment,
    seed: int,
    agent: str = "mab",
    fixed_config: Sequence[IndexCandidate] = (),
    tuner: Optional[TunerConfig] = None,
    cost: Optional[CostModelParams] = None,
    rounds: Optional[list] = None,
) -> RunResult:
    """Fresh database and tuner, replaying the workload generated for ``seed``."""
    if agent not in AGENTS:
        raise ValueError(f"unknown agent {agent!r}")
    rounds = exp.rounds(seed) if rounds is None else rounds
    db = exp.make_db(seed, cost)
    state = new_tuner(db, tuner or exp.tuner, agent, fixed_config)
    records = [run_round(state, batch) for batch in rounds]
    return RunResult(
        seed=seed,
        agent=agent,
        records=records,
        forget_rounds=list(state.forget_rounds),
        cumulative_rewards=dict(state.cumulative_rewards),
        workload_log=[[q.to_dict() for q in batch] for batch in rounds],
    )


def run_experiment(
    exp: Experiment,
    seeds: Optional[Sequence[int]] = None,
    agents: Sequence[str] = ("mab", "noindex"),
) -> Report:
    seeds = list(exp.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    report = Report(exp.name)
    for agent in agents:
        for seed in seeds:
            report.add(run_seed(exp, seed, agent))
    return report


def _hyper_from(data: Mapping) -> HyperParams:
    data = dict(data)
    if "lambda" in data:
        data["lam"] = data.pop("lambda")
    return replace(TUNER_HYPER, **data)


def tuner_from_dict(data: Optional[Mapping], memory_budget: float) -> TunerConfig:
    data = dict(data or {})
    hyper = _hyper_from(data.pop("hyper", {}) or {})
    if data.get("qoi_window") is None:
        data.pop("qoi_window", None)
    unknown = set(data) - set(TunerConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown tuner keys: {sorted(unknown)}")
    return TunerConfig(memory_budget=memory_budget, hyper=hyper, **data)


def experiment_from_dict(data: Mapping, name: str = "experiment") -> Experiment:
    try:
        spec = WorkloadSpec.from_dict(data.get("workload"))
        if "schema" in data:
            schema = Schema.from_dict(data["schema"])
            workload = workload_from_dict(data, schema)
        else:
            syn = data.get("synthetic", {}) or {}
            workload = synthetic_workload(
                int(syn.get("seed", 0)), int(syn.get("pool_size", 22)), syn.get("preset")
            )
        budget = spec.memory_budget
        if "memory_budget_ratio" in data:
            budget = float(data["memory_budget_ratio"]) * workload.schema.database_size
            spec = replace(spec, memory_budget=budget)
        tuner = tuner_from_dict(data.get("tuner"), budget)
        cost = CostModelParams.from_dict(data.get("cost"))
        seeds = tuple(int(s) for s in data.get("seeds", (spec.seed,)))
        regress = {str(k): float(v) for k, v in (data.get("plan_regressions") or {}).items()}
        for col in regress:
            workload.schema.column(col)
        ceiling = data.get("storage_ceiling")
        return Experiment(
            workload=workload,
            spec=spec,
            cost=cost,
            tuner=tuner,
            plan_regressions=regress,
            storage_ceiling=math.inf if ceiling is None else float(ceiling),
            seeds=seeds,
            name=str(data.get("name", name)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment(path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return experiment_from_dict(data, name=path.stem)
