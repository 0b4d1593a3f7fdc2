"""Fairness-aware preference-based reinforcement learning.

A vector-valued reward model is learned from pairwise segment preferences
whose labels come from a generalized Gini welfare of the segments' returns,
and a PPO agent maximizes the same welfare of its vector return.
"""

from .agent import FairPPO, train
from .evalharness import EvalReport, aggregate, evaluate
from .envs import make_env
from .preference import RewardModel
from .welfare import GiniWelfare, coefficient_of_variation, default_gini_weights, ggf, sorted_weight_vector

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "FairPPO",
    "GiniWelfare",
    "RewardModel",
    "aggregate",
    "coefficient_of_variation",
    "default_gini_weights",
    "evaluate",
    "ggf",
    "make_env",
    "sorted_weight_vector",
    "train",
]
