"""Shared linear model for the contextual combinatorial UCB learner.

All arms share one ridge-regression estimate, so state is a single scatter
matrix ``V`` and response vector ``b``.  Functions here are pure: they take a
``BanditState`` and return a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

NORM_SLACK = 1e-9


@dataclass(frozen=True)
class HyperParams:
    lam: float = 1.0
    delta: float = 0.1
    s_bound: float = 1.0
    r_subg: float = 1.0
    n_f: int = 1
    alpha_override: Optional[float] = None
    # gain applied to the shift intensity when forgetting
    forget_factor: float = 0.6
    # when set, lam must be >= max_super_arm (needed by the regret analysis)
    theory_mode: bool = False
    max_super_arm: Optional[int] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie strictly between 0 and 1")
        if self.s_bound <= 0 or self.r_subg <= 0:
            raise ValueError("s_bound and r_subg must be positive")
        if self.n_f < 1:
            raise ValueError("n_f must be a positive integer")
        if self.alpha_override is not None and self.alpha_override <= 0:
            raise ValueError("alpha_override must be positive")
        if not 0.0 <= self.forget_factor <= 1.0:
            raise ValueError("forget_factor must lie in [0, 1]")
        if self.theory_mode:
            if self.max_super_arm is None:
                raise ValueError("theory_mode needs max_super_arm")
            if self.lam < self.max_super_arm:
                raise ValueError(
                    f"lambda={self.lam} < max super-arm size {self.max_super_arm}"
                )

    @classmethod
    def for_super_arm(cls, ell: int, **kw) -> "HyperParams":
        """Defaults with ``lam = ell``, the smallest value the theory allows."""
        kw.setdefault("lam", float(ell))
        kw.setdefault("max_super_arm", ell)
        return cls(**kw)


@dataclass(frozen=True)
class ArmObservation:
    """One pulled arm's feedback split into ``n_f`` (sub-context, sub-reward) pairs."""

    sub_contexts: tuple
    sub_rewards: tuple

    @classmethod
    def single(cls, context, reward: float) -> "ArmObservation":
        return cls((np.asarray(context, dtype=float),), (float(reward),))

    @property
    def n_f(self) -> int:
        return len(self.sub_contexts)

    @property
    def context(self) -> np.ndarray:
        return np.sum(self.sub_contexts, axis=0)

    @property
    def reward(self) -> float:
        return float(sum(self.sub_rewards))


@dataclass
class BanditState:
    dim: int
    lam: float
    v_matrix: np.ndarray
    b_vector: np.ndarray
    round: int = 0
    pull_count: int = 0

    def copy(self) -> "BanditState":
        return replace(self, v_matrix=self.v_matrix.copy(), b_vector=self.b_vector.copy())


def init_state(hyper: HyperParams, dim: int) -> BanditState:
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if not hyper.lam > 0:
        raise ValueError("lambda must be positive")
    return BanditState(
        dim=dim,
        lam=hyper.lam,
        v_matrix=hyper.lam * np.eye(dim),
        b_vector=np.zeros(dim),
    )


def _cholesky(state: BanditState):
    return cho_factor(state.v_matrix, lower=True, check_finite=False)


def estimate_theta(state: BanditState) -> np.ndarray:
    """Ridge estimate solving ``V theta = b`` via Cholesky."""
    if not state.b_vector.any():
        return np.zeros(state.dim)
    return cho_solve(_cholesky(state), state.b_vector, check_finite=False)


def alpha_schedule(state: BanditState, hyper: HyperParams, k: int) -> float:
    """Exploration boost for the current round.

    ``(R / sqrt(n_f)) * sqrt(d log((1 + t k / lam) / delta)) + sqrt(lam) S``,
    with ``t`` the round about to be played.
    """
    if hyper.alpha_override is not None:
        return hyper.alpha_override
    t = state.round + 1
    d = state.dim
    log_term = math.log((1.0 + t * k / hyper.lam) / hyper.delta)
    return (hyper.r_subg / math.sqrt(hyper.n_f)) * math.sqrt(d * log_term) + math.sqrt(
        hyper.lam
    ) * hyper.s_bound


def _check_context(state: BanditState, context) -> np.ndarray:
    x = np.asarray(context, dtype=float)
    if x.shape != (state.dim,):
        raise ValueError(f"context has shape {x.shape}, expected ({state.dim},)")
    return x


def ucb_score(state: BanditState, context, alpha_t: float) -> float:
    x = _check_context(state, context)
    norm = float(np.linalg.norm(x))
    if norm > 1.0 + NORM_SLACK:
        raise ValueError(f"context norm {norm:.6g} exceeds 1")
    return float(ucb_scores(state, x[None, :], alpha_t)[0])


def ucb_scores(state: BanditState, contexts: np.ndarray, alpha_t: float) -> np.ndarray:
    """Vectorised ``ucb_score`` over the rows of ``contexts``."""
    X = np.atleast_2d(np.asarray(contexts, dtype=float))
    if X.shape[0] == 0:
        return np.zeros(0)
    if X.shape[1] != state.dim:
        raise ValueError(f"contexts have {X.shape[1]} columns, expected {state.dim}")
    factor = _cholesky(state)
    theta = cho_solve(factor, state.b_vector, check_finite=False)
    vinv_x = cho_solve(factor, X.T, check_finite=False)
    width = np.sqrt(np.maximum(np.einsum("ij,ji->i", X, vinv_x), 0.0))
    return X @ theta + alpha_t * width


def confidence_widths(state: BanditState, contexts: np.ndarray) -> np.ndarray:
    """``||x||_{V^-1}`` for each row."""
    X = np.atleast_2d(np.asarray(contexts, dtype=float))
    vinv_x = cho_solve(_cholesky(state), X.T, check_finite=False)
    return np.sqrt(np.maximum(np.einsum("ij,ji->i", X, vinv_x), 0.0))


def update(
    state: BanditState,
    observations: Sequence[ArmObservation],
    n_f: Optional[int] = None,
) -> BanditState:
    """Add every (sub-context, sub-reward) pair as a separate ridge example."""
    new = state.copy()
    for obs in observations:
        if n_f is not None and obs.n_f != n_f:
            raise ValueError(f"observation has {obs.n_f} components, expected {n_f}")
        if len(obs.sub_contexts) != len(obs.sub_rewards):
            raise ValueError("sub_contexts and sub_rewards differ in length")
        for x, r in zip(obs.sub_contexts, obs.sub_rewards):
            x = _check_context(state, x)
            if not math.isfinite(r):
                raise ValueError(f"non-finite reward {r!r}")
            new.v_matrix += np.outer(x, x)
            new.b_vector += r * x
        new.pull_count += 1
    new.round += 1
    return new


def forget(state: BanditState, intensity: float) -> BanditState:
    """Shrink learned statistics toward the prior ``lam I, 0``."""
    if not 0.0 <= intensity <= 1.0:
        raise ValueError(f"intensity {intensity} outside [0, 1]")
    new = state.copy()
    if intensity == 0.0:
        return new
    prior = state.lam * np.eye(state.dim)
    keep = 1.0 - intensity
    new.v_matrix = prior + keep * (state.v_matrix - prior)
    new.b_vector = keep * state.b_vector
    return new


def log_det(state: BanditState) -> float:
    sign, value = np.linalg.slogdet(state.v_matrix)
    return float(value) if sign > 0 else -math.inf


@dataclass
class LinearLearner:
    """Convenience wrapper holding state and hyper-parameters together.

    Used by the synthetic benchmarks; the index tuner drives the functional
    API directly.
    """

    hyper: HyperParams
    dim: int
    state: BanditState = field(init=False)

    def __post_init__(self):
        self.state = init_state(self.hyper, self.dim)

    def scores(self, contexts: np.ndarray, k: int) -> np.ndarray:
        alpha = alpha_schedule(self.state, self.hyper, k)
        return ucb_scores(self.state, contexts, alpha)

    def observe(self, observations: Sequence[ArmObservation]) -> None:
        self.state = update(self.state, observations, self.hyper.n_f)
