import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import CONFIGS, instance, select, small_schema
from mabtune.bandit import HyperParams
from mabtune.domain import QueryStore
from mabtune.experiment import (
    ConfigError,
    Report,
    experiment_from_dict,
    load_experiment,
    run_experiment,
    run_seed,
)
from mabtune.harness import brute_force_optimal
from mabtune.sim import DbState
from mabtune.tuner import TUNER_HYPER, TunerConfig, detect_shift, new_tuner, run_round

MICRO3 = {
    "schema": {
        "tables": [
            {"name": "t", "rows": 500000, "row_width": 100, "columns": [{"name": "a"}, {"name": "b"}, {"name": "c"}]},
            {"name": "u", "rows": 200000, "row_width": 80, "columns": [{"name": "x"}, {"name": "y"}]},
        ]
    },
    "templates": [
        {"id": "q1", "predicates": {"t.a": 0.01}, "payload": ["t.b"]},
        {"id": "q2", "predicates": {"u.x": 0.005}},
    ],
    "workload": {"mode": "static", "rounds": 25},
    "memory_budget_ratio": 0.1,
    "cost": {"noise_cv": 0.0},
    "tuner": {"rec_timing": "model"},
}


def micro(**over):
    data = {**MICRO3, **over}
    return experiment_from_dict(data, "micro3")


class TestRunRound:
    def test_first_rounds(self):
        exp = micro()
        rounds = exp.rounds(0)
        state = new_tuner(exp.make_db(0), exp.tuner)
        r1 = run_round(state, rounds[0])
        # nothing has been observed before round 1, so there is nothing to index
        assert r1.config == () and r1.c_cre == 0.0
        v_before = state.bandit.v_matrix.copy()
        r2 = run_round(state, rounds[1])
        assert r2.config and r2.c_cre > 0
        assert state.bandit.pull_count == len(r2.config)
        assert not np.array_equal(state.bandit.v_matrix, v_before)

    def test_zero_budget(self):
        exp = micro(memory_budget_ratio=0.0)
        res = run_seed(exp, 0)
        assert all(r.config == () and r.c_cre == 0.0 and r.memory_bytes == 0.0 for r in res.records)

    def test_memory_within_budget(self):
        exp = load_experiment(CONFIGS / "static_micro.yaml")
        res = run_seed(exp, 0)
        assert all(r.memory_bytes <= exp.tuner.memory_budget for r in res.records)

    def test_converges_on_micro(self):
        exp = micro()
        res = run_seed(exp, 0)
        bf = brute_force_optimal(exp, 0)
        assert bf.n_arms == 3
        assert res.records[-1].c_exc <= 1.05 * bf.exc_series[-1]
        assert len({r.config for r in res.records[-5:]}) == 1

    def test_pick_ignores_incoming_batch(self):
        exp = micro()
        rounds = exp.rounds(0)
        other = exp.rounds(1)
        configs = []
        for swap in (False, True):
            state = new_tuner(exp.make_db(0), exp.tuner)
            for r in range(5):
                run_round(state, rounds[r])
            rec = run_round(state, other[5] if swap else rounds[5])
            configs.append(rec.config)
        assert configs[0] == configs[1]

    def test_noindex_agent(self):
        res = run_seed(micro(), 0, "noindex")
        assert all(r.c_cre == 0.0 and r.c_rec == 0.0 and r.config == () for r in res.records)

    def test_fixed_agent(self):
        exp = micro()
        bf = brute_force_optimal(exp, 0)
        chosen = [c for c in bf.candidates if c.arm_id in bf.config]
        res = run_seed(exp, 0, "fixed", chosen)
        assert all(r.config == bf.config for r in res.records)
        assert res.records[0].c_cre > 0 and all(r.c_cre == 0 for r in res.records[1:])

    def test_unknown_agent(self):
        with pytest.raises(ValueError):
            run_seed(micro(), 0, "oracle")

    def test_structured_flag_sets_n_f(self):
        assert TunerConfig(structured=True).hyper.n_f == 2
        assert TunerConfig(structured=False).hyper.n_f == 1
        assert TunerConfig().hyper.lam == TUNER_HYPER.lam

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TunerConfig(memory_budget=-1)
        with pytest.raises(ValueError):
            TunerConfig(rec_timing="cpu")


class TestDetectShift:
    def _store(self, old, new):
        store = QueryStore()
        old_t = [select(f"o{i}", {"t.a": 0.1}) for i in range(old)]
        store.ingest([instance(t) for t in old_t], 1)
        new_t = [select(f"n{i}", {"t.a": 0.1}) for i in range(new)]
        store.ingest([instance(t) for t in old_t + new_t], 2)
        return store

    def test_steady(self):
        assert detect_shift(self._store(4, 0), 2) == 0.0

    def test_quarter(self):
        assert detect_shift(self._store(6, 2), 2) == 0.25

    def test_full_turnover(self):
        store = QueryStore()
        store.ingest([instance(select("a", {"t.a": 0.1}))], 1)
        store.ingest([instance(select("b", {"t.a": 0.1}))], 2)
        assert detect_shift(store, 2) == 1.0

    def test_empty(self):
        assert detect_shift(QueryStore(), 3) == 0.0

    def test_forget_only_on_large_shift(self):
        exp = load_experiment(CONFIGS / "shifting.yaml")
        res = run_seed(exp, 0)
        assert res.forget_rounds == [exp.spec.phase + 2]
        (rec,) = [r for r in res.records if r.forgot]
        assert rec.shift_intensity == 1.0


class TestExperiment:
    def test_conservation(self):
        res = run_seed(micro(), 0)
        for part in ("c_rec", "c_cre", "c_exc", "c_total"):
            assert res.total(part) == math.fsum(getattr(r, part) for r in res.records)
        assert res.total("c_total") == pytest.approx(res.total("c_rec") + res.total("c_cre") + res.total("c_exc"))

    def test_single_round(self):
        exp = micro(workload={"mode": "static", "rounds": 1})
        res = run_seed(exp, 0)
        (r,) = res.records
        assert res.total("c_total") == r.c_rec + r.c_cre + r.c_exc

    def test_deterministic(self):
        exp = load_experiment(CONFIGS / "misestimate.yaml")
        a, b = run_seed(exp, 3), run_seed(exp, 3)
        assert a.to_dict() == b.to_dict()

    def test_run_experiment_and_merge(self):
        exp = micro(workload={"mode": "static", "rounds": 4})
        rep = run_experiment(exp, seeds=[0, 1])
        assert rep.agents() == ["mab", "noindex"] and rep.seeds("mab") == [0, 1]
        assert all(r.c_cre == 0 for s in (0, 1) for r in rep.runs[("noindex", s)].records)
        left = run_experiment(exp, seeds=[0])
        right = run_experiment(exp, seeds=[1])
        assert left.merge(right).to_dict() == right.merge(left).to_dict() == rep.to_dict()
        with pytest.raises(ValueError):
            run_experiment(exp, seeds=[])

    def test_report_summary(self):
        exp = micro(workload={"mode": "static", "rounds": 3})
        rep = run_experiment(exp, seeds=[0, 1], agents=("noindex",))
        s = rep.summary()["noindex"]
        assert s["c_exc"] == pytest.approx(np.mean([rep.runs[("noindex", k)].total("c_exc") for k in (0, 1)]))


class TestConfigLoading:
    def test_all_configs_load(self):
        for path in sorted(CONFIGS.glob("*.yaml")):
            exp = load_experiment(path)
            assert exp.name == path.stem
            assert exp.tuner.memory_budget < math.inf

    def test_budget_ratio(self):
        exp = micro()
        assert exp.tuner.memory_budget == pytest.approx(0.1 * exp.schema.database_size)
        assert exp.spec.memory_budget == exp.tuner.memory_budget

    def test_hyper_section(self):
        exp = micro(tuner={"hyper": {"lambda": 2.0, "alpha_override": None}, "structured": False})
        assert exp.tuner.hyper == HyperParams(lam=2.0, n_f=1)

    def test_defaults_fill_hyper(self):
        assert micro(tuner={"hyper": {"delta": 0.05}}).tuner.hyper == replace(TUNER_HYPER, delta=0.05, n_f=2)

    @pytest.mark.parametrize(
        "bad",
        [
            {"tuner": {"bogus": 1}},
            {"tuner": {"hyper": {"lambda": 0}}},
            {"cost": {"scan_rate": 1}},
            {"workload": {"mode": "sideways"}},
            {"plan_regressions": {"t.zz": 1.0}},
            {"templates": [{"id": "q", "predicates": {"t.zz": 0.1}}]},
        ],
    )
    def test_errors(self, bad):
        with pytest.raises(ConfigError):
            micro(**bad)

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment(tmp_path / "missing.yaml")
        p = tmp_path / "bad.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_experiment(p)
        p.write_text("a: [1\n")
        with pytest.raises(ConfigError):
            load_experiment(p)

    def test_json_config(self, tmp_path):
        import json

        p = tmp_path / "m.json"
        p.write_text(json.dumps(MICRO3))
        assert load_experiment(p).tuner == micro().tuner

    def test_synthetic_workload(self):
        exp = experiment_from_dict({"synthetic": {"seed": 2, "preset": "ssb"}, "workload": {"rounds": 3}})
        assert len(exp.workload.templates) == 13
        assert len(exp.rounds(0)) == 3
