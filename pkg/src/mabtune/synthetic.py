"""Synthetic linear contextual combinatorial bandits with a known parameter.

Used to check regret behaviour of the learner in isolation from the
database simulator: each round every arm gets a fresh context, the learner
picks ``ell`` arms through the knapsack oracle (unit costs, budget ``ell``)
and observes noisy linear rewards for the picked arms only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bandit as bc
from .oracle import ALPHA_GREEDY, ScoredArm, greedy_select


def _positive_unit(rng: np.random.Generator, shape) -> np.ndarray:
    v = np.abs(rng.normal(size=shape))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass
class LinearEnv:
    """Arms with nonnegative contexts of norm <= 1 and ``||theta|| = 1``.

    With ``split`` set, coordinates ``[split:]`` form a second reward
    component observed separately (complementary-sparse sub-contexts).
    """

    n_arms: int = 10
    dim: int = 6
    ell: int = 3
    noise: float = 0.1
    seed: int = 0
    split: Optional[int] = None
    theta: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0 < self.ell <= self.n_arms:
            raise ValueError("need 0 < ell <= n_arms")
        if self.split is not None and not 0 < self.split < self.dim:
            raise ValueError("split must lie strictly inside the context")
        # separate streams keep contexts identical across learners on one seed
        self.rng = np.random.default_rng([self.seed, 31337])
        self.noise_rng = np.random.default_rng([self.seed, 27449])
        self.theta = _positive_unit(self.rng, self.dim)

    def contexts(self) -> np.ndarray:
        X = _positive_unit(self.rng, (self.n_arms, self.dim))
        return X * self.rng.uniform(0.5, 1.0, size=(self.n_arms, 1))

    def means(self, X: np.ndarray) -> np.ndarray:
        return X @ self.theta

    def optimal_value(self, X: np.ndarray) -> float:
        return float(np.sort(self.means(X))[::-1][: self.ell].sum())

    def sub_parts(self, x: np.ndarray) -> tuple:
        a = x.copy()
        a[self.split :] = 0.0
        return a, x - a

    def observe(self, X: np.ndarray, picks) -> list:
        """One observation per pick; ``n_f = 2`` split when ``split`` is set."""
        out = []
        for i in picks:
            x = X[i]
            if self.split is None:
                r = float(x @ self.theta + self.noise * self.noise_rng.normal())
                out.append(bc.ArmObservation.single(x, r))
            else:
                parts = self.sub_parts(x)
                rewards = tuple(float(p @ self.theta + self.noise * self.noise_rng.normal()) for p in parts)
                out.append(bc.ArmObservation(parts, rewards))
        return out


def merge_observation(obs: bc.ArmObservation) -> bc.ArmObservation:
    """Collapse a multi-part observation into the standard single example."""
    return bc.ArmObservation.single(obs.context, obs.reward)


def choose(scores: np.ndarray, ell: int) -> list:
    arms = [ScoredArm(f"a{i:03d}", float(s), 1.0) for i, s in enumerate(scores)]
    return [int(a[1:]) for a in greedy_select(arms, float(ell), filtering=False)]


@dataclass
class BanditRun:
    regret: np.ndarray  # per-round alpha * opt - expected reward
    optimism_held: bool
    optimal: np.ndarray = None  # per-round best achievable expected reward
    earned: np.ndarray = None  # per-round expected reward of the pick

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.regret)

    def alpha_regret(self, alpha: float) -> np.ndarray:
        """Cumulative alpha-regret of the same run under another alpha."""
        return np.cumsum(alpha * self.optimal - self.earned)


def run_linear_bandit(
    env: LinearEnv,
    hyper: bc.HyperParams,
    rounds: int,
    alpha: float = ALPHA_GREEDY,
    structured: bool = False,
) -> BanditRun:
    """Play ``rounds`` rounds of C2UCB against ``env``.

    With ``structured`` the learner receives the environment's sub-pairs;
    otherwise multi-part observations are merged first.  Also tracks
    whether every pulled arm's UCB stayed above its true mean.
    """
    learner = bc.LinearLearner(hyper, env.dim)
    optimal = np.empty(rounds)
    earned = np.empty(rounds)
    optimistic = True
    for t in range(rounds):
        X = env.contexts()
        a_t = bc.alpha_schedule(learner.state, hyper, env.n_arms)
        scores = bc.ucb_scores(learner.state, X, a_t)
        picks = choose(scores, env.ell)
        means = env.means(X)
        if np.any(scores[picks] < means[picks] - 1e-12):
            optimistic = False
        optimal[t] = env.optimal_value(X)
        earned[t] = float(means[picks].sum())
        obs = env.observe(X, picks)
        if not structured:
            obs = [merge_observation(o) if o.n_f > 1 else o for o in obs]
        learner.observe(obs)
    return BanditRun(alpha * optimal - earned, optimistic, optimal, earned)
