"""Online index selection with a contextual combinatorial bandit."""

from .bandit import ArmObservation, BanditState, HyperParams
from .experiment import Experiment, Report, RunResult, load_experiment, run_experiment, run_seed
from .harness import brute_force_optimal, compute_alpha_regret, replay_rewards
from .oracle import ALPHA_GREEDY, ScoredArm, greedy_select
from .sim import CostModelParams, DbState
from .tuner import TunerConfig, new_tuner, run_round
from .workloads import WorkloadSpec, gen_workload

__all__ = [
    "ALPHA_GREEDY",
    "ArmObservation",
    "BanditState",
    "CostModelParams",
    "DbState",
    "Experiment",
    "HyperParams",
    "Report",
    "RunResult",
    "ScoredArm",
    "TunerConfig",
    "WorkloadSpec",
    "brute_force_optimal",
    "compute_alpha_regret",
    "gen_workload",
    "greedy_select",
    "load_experiment",
    "new_tuner",
    "replay_rewards",
    "run_experiment",
    "run_round",
    "run_seed",
]
