"""The online tuning loop: observe, recommend, build, execute, learn."""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import bandit as bc
from .domain import ContextLayout, IndexCandidate, QueryStore, build_context, generate_arms
from .oracle import ScoredArm, greedy_select
from .reward import arm_reward, compute_gains, split_structured
from .sim import DbState, ObservationCache, execute, materialise

AGENTS = ("mab", "noindex", "fixed")

# Context features live on very different scales (column slots ~0.05, flags
# ~0.5), so a small ridge term is needed for column weights to be learnable,
# and the theoretical alpha explores far too much for a few dozen rounds.
TUNER_HYPER = bc.HyperParams(lam=0.003, alpha_override=0.5)


@dataclass(frozen=True)
class TunerConfig:
    memory_budget: float = math.inf
    hyper: bc.HyperParams = TUNER_HYPER
    structured: bool = True
    max_key_width: int = 3
    arm_cap: int = 64
    qoi_window: float = 40
    context_history: int = 10
    shift_threshold: float = 0.5
    reward_scale: Optional[float] = None  # None: first round's no-index time
    filtering: bool = True
    rec_timing: str = "wall"  # "wall" or "model"
    rec_base_sec: float = 1e-3
    rec_per_arm_sec: float = 1e-4

    def __post_init__(self):
        if self.memory_budget < 0:
            raise ValueError("memory_budget must be non-negative")
        if self.rec_timing not in ("wall", "model"):
            raise ValueError(f"rec_timing must be 'wall' or 'model', not {self.rec_timing!r}")
        if self.reward_scale is not None and self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if self.structured and self.hyper.n_f != 2:
            object.__setattr__(self, "hyper", replace(self.hyper, n_f=2))
        if not self.structured and self.hyper.n_f != 1:
            object.__setattr__(self, "hyper", replace(self.hyper, n_f=1))


@dataclass
class RoundRecord:
    round: int
    c_rec: float
    c_cre: float
    c_exc: float
    config: tuple
    memory_bytes: float
    arm_rewards: dict = field(default_factory=dict)
    created: tuple = ()
    used: tuple = ()
    n_arms: int = 0
    alpha: float = 0.0
    shift_intensity: float = 0.0
    forgot: bool = False
    baseline_exc: float = 0.0
    dropped_unclaimed: float = 0.0

    @property
    def c_total(self) -> float:
        return self.c_rec + self.c_cre + self.c_exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = list(self.config)
        d["created"] = list(self.created)
        d["used"] = list(self.used)
        return d


@dataclass
class TunerState:
    config: TunerConfig
    db: DbState
    layout: ContextLayout
    bandit: bc.BanditState
    store: QueryStore = field(default_factory=QueryStore)
    cache: ObservationCache = field(default_factory=ObservationCache)
    pick_history: deque = field(default_factory=deque)
    templates: dict = field(default_factory=dict)
    pending: list = field(default_factory=list)
    round: int = 0
    scale: Optional[float] = None
    agent: str = "mab"
    fixed_config: tuple = ()
    cumulative_rewards: dict = field(default_factory=dict)
    forget_rounds: list = field(default_factory=list)


def new_tuner(db: DbState, config: TunerConfig, agent: str = "mab", fixed_config=()) -> TunerState:
    if agent not in AGENTS:
        raise ValueError(f"unknown agent {agent!r}")
    layout = ContextLayout.for_schema(db.schema, config.context_history)
    return TunerState(
        config=config,
        db=db,
        layout=layout,
        bandit=bc.init_state(config.hyper, layout.dim),
        cache=ObservationCache(window=config.qoi_window),
        pick_history=deque(maxlen=config.context_history),
        scale=config.reward_scale,
        agent=agent,
        fixed_config=tuple(fixed_config),
    )


def detect_shift(store: QueryStore, round_no: int) -> float:
    """Share of the templates seen in ``round_no`` that were new in that round."""
    active = store.seen_in(round_no)
    if not active:
        return 0.0
    new = sum(1 for r in active if r.first_seen == round_no)
    return min(1.0, max(0.0, new / len(active)))


def _recent_uses(state: TunerState, arm_id: str) -> int:
    return sum(1 for used in state.pick_history if arm_id in used)


def recommend(state: TunerState) -> tuple:
    """Score the current candidates and pick a configuration.

    Reads only the query store, i.e. queries of rounds already executed.
    Returns (chosen candidates, contexts by arm id, number of arms, alpha).
    """
    cfg = state.config
    if state.agent == "noindex":
        return [], {}, 0, 0.0
    if state.agent == "fixed":
        return list(state.fixed_config), {}, len(state.fixed_config), 0.0

    qoi = state.store.select_qoi(state.round, cfg.qoi_window)
    arms = generate_arms(qoi, state.db.schema, cfg.max_key_width, cfg.arm_cap)
    if not arms:
        return [], {}, 0, 0.0
    preds = {c for rec in qoi for c in rec.template.predicate_columns}
    db_size = state.db.schema.database_size
    contexts = {}
    for arm in arms:
        contexts[arm.arm_id] = build_context(
            arm,
            state.layout,
            preds,
            db_size,
            recent_uses=_recent_uses(state, arm.arm_id),
            materialised=arm.arm_id in state.db.materialised,
        )
    X = np.stack([contexts[a.arm_id] for a in arms])
    alpha = bc.alpha_schedule(state.bandit, cfg.hyper, len(arms))
    scores = bc.ucb_scores(state.bandit, X, alpha)
    scored = [
        ScoredArm(
            arm_id=a.arm_id,
            score=float(s),
            memory_cost=a.est_size_bytes,
            key_columns=a.key_columns,
            include_columns=a.include_columns,
            query_origins=a.query_origins,
            is_covering={q: True for q in a.covering_for},
        )
        for a, s in zip(arms, scores)
    ]
    ids = greedy_select(scored, cfg.memory_budget, filtering=cfg.filtering)
    by_id = {a.arm_id: a for a in arms}
    return [by_id[i] for i in ids], contexts, len(arms), alpha


def run_round(state: TunerState, incoming: Sequence) -> RoundRecord:
    """One round; ``incoming`` is executed but never consulted before the pick."""
    cfg = state.config
    t = state.round + 1

    intensity, forgot = 0.0, False
    if state.pending:
        state.store.ingest(state.pending, state.round)
        intensity = detect_shift(state.store, state.round)
        if (
            state.agent == "mab"
            and intensity > cfg.shift_threshold
            and state.bandit.pull_count > 0
        ):
            state.bandit = bc.forget(state.bandit, cfg.hyper.forget_factor * intensity)
            state.forget_rounds.append(t)
            forgot = True

    started = time.perf_counter()
    chosen, contexts, n_arms, alpha = recommend(state)
    wall = time.perf_counter() - started
    c_rec = wall if cfg.rec_timing == "wall" else cfg.rec_base_sec + cfg.rec_per_arm_sec * n_arms
    if state.agent == "noindex":
        c_rec = 0.0

    creation = materialise(state.db, chosen)
    trace = execute(state.db, incoming, t)
    trace.creation_times = dict(creation)
    for q in incoming:
        state.templates.setdefault(q.template_id, q.template)
    state.cache.record(trace)
    used = trace.used_indices()
    state.pick_history.append(used)

    gains = compute_gains(trace, state.db, state.cache, state.templates)
    if state.scale is None and incoming:
        state.scale = max(gains.baseline_time, 1e-9)
    rewards = {}
    observations = []
    for arm in chosen:
        created = arm.arm_id in creation
        c_time = creation.get(arm.arm_id, 0.0)
        g = gains.gain(arm.arm_id)
        rewards[arm.arm_id] = arm_reward(g, c_time, created)
        state.cumulative_rewards[arm.arm_id] = (
            state.cumulative_rewards.get(arm.arm_id, 0.0) + rewards[arm.arm_id]
        )
        if state.agent != "mab":
            continue
        x = contexts[arm.arm_id]
        scale = state.scale or 1.0
        if cfg.structured:
            observations.append(
                split_structured(x, g / scale, c_time / scale, created, state.layout.size_slot)
            )
        else:
            observations.append(bc.ArmObservation.single(x, rewards[arm.arm_id] / scale))
    if state.agent == "mab":
        state.bandit = bc.update(state.bandit, observations, cfg.hyper.n_f)

    state.pending = list(incoming)
    state.round = t
    return RoundRecord(
        round=t,
        c_rec=c_rec,
        c_cre=trace.creation_time,
        c_exc=trace.execution_time,
        config=tuple(sorted(a.arm_id for a in chosen)),
        memory_bytes=state.db.used_bytes,
        arm_rewards=rewards,
        created=tuple(sorted(creation)),
        used=tuple(sorted(used)),
        n_arms=n_arms,
        alpha=alpha,
        shift_intensity=intensity,
        forgot=forgot,
        baseline_exc=gains.baseline_time,
        dropped_unclaimed=gains.dropped_unclaimed,
    )
