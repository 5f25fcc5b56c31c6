"""mbrlab: a desk-scale model-based RL laboratory.

Learned probabilistic-ensemble dynamics, entropy-bonus CEM planning with a
progressive exploration schedule, analytic control environments, and exact
verification of the trajectory-reward error bound on tabular MDPs.
"""

__version__ = "0.1.0"

from .agent import EpochRecord, RunConfig, RunResult, evaluate_policy, run
from .ensemble import (EnsembleModel, Normalizer, ReplayBuffer, RewardNet,
                       TrainConfig, load_checkpoint, nll_loss, predict_reward,
                       save_checkpoint, train_models)
from .envs import (ContinuousCartPole, DeceptivePointMass, Environment,
                   PendulumSwingUp, make_env)
from .mathcore import (DegenerateDataError, DiagonalGaussian, RngStream,
                       gaussian_entropy, gaussian_sample, pca_top2)
from .planner import (ActionSequenceDistribution, ExplorationSchedule,
                      ImaginedTrajectory, PlanConfig, PlanningFailureError,
                      plan_action, rollout, score, temperature)
from .tabular import (BoundReport, TabularMDP, TabularModel, TabularPolicy,
                      expected_return, model_error_tv, tightness_sweep,
                      verify_bound)

__all__ = [
    "ActionSequenceDistribution", "BoundReport", "ContinuousCartPole",
    "DeceptivePointMass", "DegenerateDataError", "DiagonalGaussian",
    "EnsembleModel", "Environment", "EpochRecord", "ExplorationSchedule",
    "ImaginedTrajectory", "Normalizer", "PendulumSwingUp", "PlanConfig",
    "PlanningFailureError", "ReplayBuffer", "RewardNet", "RngStream",
    "RunConfig", "RunResult", "TabularMDP", "TabularModel", "TabularPolicy",
    "TrainConfig", "evaluate_policy", "expected_return", "gaussian_entropy",
    "gaussian_sample", "load_checkpoint", "make_env", "model_error_tv",
    "nll_loss", "pca_top2", "plan_action", "predict_reward", "rollout", "run",
    "save_checkpoint", "score", "temperature", "tightness_sweep", "train_models",
    "verify_bound",
]
