"""Command-line harness: run an experiment config and write JSON/CSV reports.

Exit status: 0 ok, 1 config error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .experiment import ConfigError, Experiment, Report, RunResult, load_experiment, run_seed
from .harness import MAX_BRUTE_FORCE_ARMS, arm_universe, brute_force_optimal, run_alpha_regret

log = logging.getLogger("mabtune")

CSV_COLUMNS = ("round", "c_rec_s", "c_cre_s", "c_exc_s", "c_total_s", "config_size", "memory_bytes", "agent")
PARTS = ("c_rec", "c_cre", "c_exc", "c_total")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _seeds(text: str) -> list:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mabtune", description="Online index tuning experiments")
    p.add_argument("--config", required=True, help="YAML or JSON experiment file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--agent", choices=("mab", "noindex", "bruteforce"), default="mab")
    p.add_argument("--structured", type=_bool, default=None, help="focused update on/off (true/false)")
    p.add_argument("--seeds", type=_seeds, default=None, help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--assert-invariants", action="store_true", help="exit 2 if a runtime check fails")
    p.add_argument("--no-baseline", action="store_true", help="skip the no-index baseline run")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def csv_rows(run: RunResult) -> list:
    return [
        {
            "round": r.round,
            "c_rec_s": repr(float(r.c_rec)),
            "c_cre_s": repr(float(r.c_cre)),
            "c_exc_s": repr(float(r.c_exc)),
            "c_total_s": repr(float(r.c_total)),
            "config_size": len(r.config),
            "memory_bytes": repr(float(r.memory_bytes)),
            "agent": run.agent,
        }
        for r in run.records
    ]


def write_csv(path: Path, rows: Sequence[dict], columns: Sequence[str] = CSV_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def aggregate_rows(runs: Sequence[RunResult]) -> list:
    """Per-round mean and interquartile range across seeds."""
    n = min(len(r.records) for r in runs)
    rows = []
    for i in range(n):
        row = {"round": i + 1}
        for part in PARTS:
            vals = np.array([getattr(r.records[i], part) for r in runs])
            q25, q75 = np.percentile(vals, [25, 75])
            row[f"{part}_s_mean"] = repr(float(vals.mean()))
            row[f"{part}_s_q25"] = repr(float(q25))
            row[f"{part}_s_q75"] = repr(float(q75))
        rows.append(row)
    return rows


def summary_table(report: Report) -> str:
    """Recommendation / creation / execution / total seconds per agent (mean over seeds)."""
    summary = report.summary()
    head = f"{'agent':<12}{'recommendation':>16}{'creation':>12}{'execution':>12}{'total':>12}"
    lines = [head, "-" * len(head)]
    for agent, parts in summary.items():
        lines.append(
            f"{agent:<12}{parts['c_rec']:>16.3f}{parts['c_cre']:>12.3f}"
            f"{parts['c_exc']:>12.3f}{parts['c_total']:>12.3f}"
        )
    return "\n".join(lines) + "\n"


def check_invariants(exp: Experiment, report: Report, out: Path) -> list:
    """Runtime checks; returns a list of violation messages."""
    problems = []
    budget = exp.tuner.memory_budget
    for (agent, seed), run in sorted(report.runs.items()):
        for r in run.records:
            if r.memory_bytes > budget * (1 + 1e-12):
                problems.append(f"{agent}/{seed} round {r.round}: memory {r.memory_bytes} > budget {budget}")
            if any(not math.isfinite(getattr(r, p)) or getattr(r, p) < 0 for p in PARTS):
                problems.append(f"{agent}/{seed} round {r.round}: bad cost component")
            if agent == "noindex" and r.c_cre != 0.0:
                problems.append(f"noindex/{seed} round {r.round}: c_cre = {r.c_cre}")
        path = out / f"{agent}_seed{seed}.csv"
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for part in PARTS:
            col = math.fsum(float(row[f"{part}_s"]) for row in rows)
            if col != run.total(part):
                problems.append(f"{path.name}: {part} column sums to {col!r}, report says {run.total(part)!r}")
    return problems


def run(
    config_path,
    out_dir,
    agent: str = "mab",
    structured: Optional[bool] = None,
    seeds: Optional[Sequence[int]] = None,
    assert_invariants: bool = False,
    baseline: bool = True,
) -> int:
    try:
        exp = load_experiment(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if structured is not None:
        exp = replace(exp, tuner=replace(exp.tuner, structured=structured))
    seeds = list(exp.seeds if seeds is None else seeds)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    report = Report(exp.name)
    oracle, regret = {}, {}
    for seed in seeds:
        rounds = exp.rounds(seed)
        if agent == "bruteforce":
            try:
                bf = brute_force_optimal(exp, seed, rounds)
            except ValueError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            chosen = [c for c in bf.candidates if c.arm_id in bf.config]
            res = run_seed(exp, seed, "fixed", chosen, rounds=rounds)
            res.agent = "bruteforce"
            oracle[seed] = {"config": list(bf.config), "n_arms": bf.n_arms, "n_configs": bf.n_configs}
        else:
            res = run_seed(exp, seed, agent, rounds=rounds)
            if agent == "mab" and len(arm_universe(exp, rounds)) <= MAX_BRUTE_FORCE_ARMS:
                reg, bf = run_alpha_regret(exp, seed, res.records, rounds)
                regret[seed] = {
                    "oracle_config": list(bf.config),
                    "per_round": [float(v) for v in reg.per_round],
                    "cumulative": [float(v) for v in reg.cumulative],
                }
        report.add(res)
        if baseline and agent != "noindex":
            report.add(run_seed(exp, seed, "noindex", rounds=rounds))
        with open(out / f"workload_seed{seed}.jsonl", "w") as fh:
            for r, batch in enumerate(res.workload_log, start=1):
                fh.write(json.dumps({"round": r, "queries": batch}, sort_keys=True) + "\n")

    for (a, s), res in sorted(report.runs.items()):
        write_csv(out / f"{a}_seed{s}.csv", csv_rows(res))
    primary = [report.runs[(agent, s)] for s in seeds]
    agg = aggregate_rows(primary)
    write_csv(out / f"{agent}_aggregate.csv", agg, list(agg[0]) if agg else ["round"])
    payload = report.to_dict()
    if oracle:
        payload["bruteforce"] = {str(k): v for k, v in oracle.items()}
    if regret:
        payload["alpha_regret"] = {str(k): v for k, v in regret.items()}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    table = summary_table(report)
    (out / "summary.txt").write_text(table)
    print(table, end="")

    if assert_invariants:
        problems = check_invariants(exp, report, out)
        for msg in problems:
            print(f"invariant violated: {msg}", file=sys.stderr)
        if problems:
            return EXIT_INVARIANT
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return run(
        args.config,
        args.out,
        agent=args.agent,
        structured=args.structured,
        seeds=args.seeds,
        assert_invariants=args.assert_invariants,
        baseline=not args.no_baseline,
    )


if __name__ == "__main__":
    sys.exit(main())
