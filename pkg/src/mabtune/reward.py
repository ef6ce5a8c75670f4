"""Per-index rewards from an execution trace.

A query's time gain over the no-index baseline is split three ways: data
scan gain for each index the plan read, maintenance gain (usually negative)
for each index the statement had to update, and whatever is left over
("unclaimed") shared equally by every participating index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bandit import ArmObservation
from .sim import DbState, ExecutionTrace, ObservationCache, estimate_full_scan, estimate_other_baseline

log = logging.getLogger(__name__)


@dataclass
class ArmGain:
    g_ds: float = 0.0
    g_im: float = 0.0
    g_un: float = 0.0

    @property
    def g_total(self) -> float:
        return self.g_ds + self.g_im + self.g_un


@dataclass
class QueryGain:
    seq: int
    template_id: str
    baseline_time: float  # C_to(q, empty), partly estimated
    actual_time: float  # C_to(q, s)
    participants: tuple
    per_arm: dict  # arm id -> ArmGain for this query only

    @property
    def total_gain(self) -> float:
        return self.baseline_time - self.actual_time

    @property
    def claimed(self) -> float:
        return math.fsum(g.g_total for g in self.per_arm.values())


@dataclass
class GainBreakdown:
    per_arm: dict = field(default_factory=dict)
    per_query: list = field(default_factory=list)
    dropped_unclaimed: float = 0.0
    dropped_queries: int = 0

    def gain(self, arm_id: str) -> float:
        g = self.per_arm.get(arm_id)
        return 0.0 if g is None else g.g_total

    @property
    def baseline_time(self) -> float:
        return math.fsum(q.baseline_time for q in self.per_query)


def compute_gains(
    trace: ExecutionTrace,
    db: DbState,
    cache: ObservationCache,
    templates: Mapping,
) -> GainBreakdown:
    """Decompose every query's gain; ``cache`` must already hold this trace."""
    out = GainBreakdown()
    now = trace.round
    for q in trace.queries:
        per_arm: dict = {}
        baseline_parts = []
        for a in q.accesses:
            if a.is_scan:
                baseline_parts.append(a.time)
                continue
            full, _ = estimate_full_scan(cache, db, a.table, q.template_id, now)
            baseline_parts.append(full)
            per_arm.setdefault(a.index_id, ArmGain()).g_ds += full - a.time
        baseline_parts.append(estimate_other_baseline(cache, db, q, templates.get(q.template_id), now))
        baseline_parts.append(q.maint_base)
        baseline = math.fsum(baseline_parts)

        if q.updated:
            if q.maint_per_index is not None:
                for arm_id, secs in q.maint_per_index.items():
                    per_arm.setdefault(arm_id, ArmGain()).g_im -= secs
            else:
                share = (q.maint_base - q.maint_total) / len(q.updated)
                for arm_id in q.updated:
                    per_arm.setdefault(arm_id, ArmGain()).g_im += share

        participants = tuple(sorted(set(q.used) | set(q.updated)))
        qg = QueryGain(q.seq, q.template_id, baseline, q.total_time, participants, per_arm)
        unclaimed = qg.total_gain - qg.claimed
        if participants:
            share = unclaimed / len(participants)
            for arm_id in participants:
                per_arm.setdefault(arm_id, ArmGain()).g_un += share
        elif unclaimed != 0.0:
            out.dropped_unclaimed += unclaimed
            out.dropped_queries += 1
            log.debug("query %s: dropped %.3g s unclaimed gain", q.seq, unclaimed)
        out.per_query.append(qg)
        for arm_id, g in per_arm.items():
            acc = out.per_arm.setdefault(arm_id, ArmGain())
            acc.g_ds += g.g_ds
            acc.g_im += g.g_im
            acc.g_un += g.g_un
    return out


def arm_reward(gain: float, creation_time: float, materialised_this_round: bool) -> float:
    if creation_time < 0:
        raise ValueError("creation_time must be non-negative")
    return gain - (creation_time if materialised_this_round else 0.0)


def super_arm_reward(rewards: Mapping) -> float:
    return math.fsum(rewards.values())


def split_structured(
    context: np.ndarray,
    gain: float,
    creation_time: float,
    materialised_this_round: bool,
    size_slot: int,
) -> ArmObservation:
    """Focused two-part observation: execution gain vs. creation cost.

    The size slot alone carries the creation cost; every other slot carries
    the execution gain.
    """
    x = np.asarray(context, dtype=float)
    if size_slot is None or not 0 <= size_slot < x.shape[0]:
        raise ValueError(f"size slot {size_slot} outside context of length {x.shape[0]}")
    exec_part = x.copy()
    exec_part[size_slot] = 0.0
    size_part = np.zeros_like(x)
    size_part[size_slot] = x[size_slot]
    cost = -creation_time if materialised_this_round else 0.0
    return ArmObservation((exec_part, size_part), (float(gain), float(cost)))
