"""Interaction loop: plan, act, record, retrain, once per epoch.

Epoch e runs `steps_per_epoch` environment steps.  During the warmup epochs
actions are uniform random inside the action box (an untrained model cannot
plan); afterwards every step re-plans with the CEM planner at temperature
beta(e).  At the end of every epoch from the last warmup epoch onward, the
ensemble and reward net are retrained from the full replay buffer.  The whole
loop is a pure function of the run seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import (EnsembleModel, ReplayBuffer, RewardNet, TrainConfig,
                       TrainReport, train_models)
from .envs import Environment, make_env
from .mathcore import RngStream
from .planner import (ExplorationSchedule, PlanConfig, PlanningFailureError,
                      plan_action, temperature)

# stream namespaces, fixed so run layouts can never collide
NS_MODEL_INIT = 1
NS_ENV = 2
NS_WARMUP = 3
NS_PLAN = 4
NS_TRAIN = 5
NS_EVAL = 6


@dataclass
class RunConfig:
    env_name: str
    env_overrides: dict = field(default_factory=dict)
    plan: PlanConfig = field(default_factory=PlanConfig)
    schedule: ExplorationSchedule = field(default_factory=ExplorationSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    steps_per_epoch: int = 1000   # desk presets use 200
    total_epochs: int = 10
    warmup_epochs: int = 1
    eval_episodes: int = 3
    seed: int = 0

    def validate(self):
        if self.warmup_epochs < 1:
            raise ValueError("warmup_epochs must be >= 1")
        if self.total_epochs <= self.warmup_epochs:
            raise ValueError("total_epochs must exceed warmup_epochs")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        self.plan.validate()
        self.schedule.validate()
        self.train.validate()
        return self


@dataclass
class EpochRecord:
    epoch: int
    true_return: float            # cumulative real reward over the epoch
    beta: float
    model_loss_mean: float        # final-epoch NLL mean across members (nan pre-training)
    planner_best_return: float    # mean over the epoch's planning calls (nan in warmup)
    planner_iterations_mean: float
    actions: np.ndarray           # (steps_per_epoch, action_dim), executed actions


@dataclass
class RunResult:
    records: list[EpochRecord]
    model: EnsembleModel
    reward: RewardNet
    buffer: ReplayBuffer
    train_reports: list[TrainReport]


class AgentLoopError(RuntimeError):
    """Planning failure wrapped with interaction-loop context."""


def run(config: RunConfig, env: Environment | None = None) -> RunResult:
    """Execute the full interaction loop described in the module docstring."""
    config.validate()
    if env is None:
        env = make_env(config.env_name, config.env_overrides)
    root = RngStream(config.seed)

    model = EnsembleModel(env.state_dim, env.action_dim, config.train,
                          root.child(NS_MODEL_INIT, 0))
    reward = RewardNet(env.state_dim, env.action_dim, config.train,
                       root.child(NS_MODEL_INIT, 1))
    buffer = ReplayBuffer(env.state_dim, env.action_dim)

    env_rng = root.child(NS_ENV)
    warmup_rng = root.child(NS_WARMUP)
    state = env.reset(env_rng.child(0))
    episode_index = 0

    records: list[EpochRecord] = []
    train_reports: list[TrainReport] = []

    for epoch in range(config.total_epochs):
        beta = temperature(config.schedule, epoch)
        epoch_return = 0.0
        best_returns: list[float] = []
        iters: list[int] = []
        actions_taken = np.zeros((config.steps_per_epoch, env.action_dim))

        for step in range(config.steps_per_epoch):
            if epoch < config.warmup_epochs:
                action = warmup_rng.gen.uniform(env.action_low, env.action_high)
            else:
                try:
                    action, diag = plan_action(
                        model, reward, state, epoch, config.plan, config.schedule,
                        root.child(NS_PLAN, epoch, step),
                        env.action_low, env.action_high)
                except PlanningFailureError as exc:
                    raise AgentLoopError(
                        f"planning failed at epoch {epoch}, step {step}: {exc}"
                    ) from exc
                best_returns.append(diag.best_return)
                iters.append(diag.iterations_used)
            actions_taken[step] = action
            next_state, r, done = env.step(action)
            buffer.add(state, action, next_state, r)
            epoch_return += r
            if done:
                episode_index += 1
                state = env.reset(env_rng.child(episode_index))
            else:
                state = next_state

        model_loss = float("nan")
        if epoch >= config.warmup_epochs - 1:   # warmup data is complete
            report = train_models(model, reward, buffer, config.train,
                                  root.child(NS_TRAIN, epoch), update_index=epoch)
            train_reports.append(report)
            model_loss = report.final_member_loss_mean

        records.append(EpochRecord(
            epoch=epoch, true_return=epoch_return, beta=beta,
            model_loss_mean=model_loss,
            planner_best_return=float(np.mean(best_returns)) if best_returns else float("nan"),
            planner_iterations_mean=float(np.mean(iters)) if iters else float("nan"),
            actions=actions_taken,
        ))

    return RunResult(records=records, model=model, reward=reward, buffer=buffer,
                     train_reports=train_reports)


def evaluate_policy(model, reward, env: Environment, episodes: int,
                    rng: RngStream, plan_cfg: PlanConfig | None = None):
    """Mean/std of the true episodic return when planning with beta = 0.

    The entropy bonus is a training-time exploration device; evaluation is
    pure exploitation of the learned model against the real environment.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    plan_cfg = plan_cfg or PlanConfig()
    off = ExplorationSchedule(mode="off")
    returns = np.zeros(episodes)
    for ep in range(episodes):
        state = env.reset(rng.child(ep, 0))
        total = 0.0
        for step in range(env.horizon):
            action, _ = plan_action(model, reward, state, 0, plan_cfg, off,
                                    rng.child(ep, 1, step),
                                    env.action_low, env.action_high)
            state, r, done = env.step(action)
            total += r
            if done:
                break
        returns[ep] = total
    return float(np.mean(returns)), float(np.std(returns))
