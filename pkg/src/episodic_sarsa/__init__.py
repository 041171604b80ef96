"""Trajectory-batched SARSA with linear function approximation for random-horizon MDPs."""

from .chain import ChainAnalysis, analyze, absorption_second_moment, contraction_coefficient, norm, weighted_norm
from .linear_fa import FeatureMatrix, TdSystem, assemble, exact_q, solve_coupled_fixed_point
from .mdp import MdpSpec, PolicyTable, discount_transform, expected_reward, validate
from .policies import PolicyFamily, estimate_lipschitz, evaluate, sample_delta_eps
from .trainer import StepSchedule, TrainState, Trajectory, h_of, simulate_episode, train

__version__ = "0.1.0"

__all__ = [
    "ChainAnalysis", "FeatureMatrix", "MdpSpec", "PolicyFamily", "PolicyTable", "StepSchedule", "TdSystem",
    "TrainState", "Trajectory", "absorption_second_moment", "analyze", "assemble", "contraction_coefficient",
    "discount_transform", "estimate_lipschitz", "evaluate", "exact_q", "expected_reward", "h_of", "norm",
    "sample_delta_eps", "simulate_episode", "solve_coupled_fixed_point", "train", "validate", "weighted_norm",
]
