"""Entropy-regularized CEM planning over a learned ensemble model.

Every interaction step re-plans from scratch: the per-timestep action
distribution is re-initialized to N(mu0, sigma0^2 I), K candidate action
sequences are sampled and rolled out through the model (one ensemble member
per candidate, held fixed over the horizon), candidates are scored by the
discounted sum of predicted reward plus `beta` times the predicted next-state
entropy, and the distribution is refit to the elite candidates with smoothing
rate alpha.  The executed action is the first action of the best-scoring
candidate seen across all iterations.

`beta` comes from an exploration schedule that ramps linearly between two
interaction-epoch thresholds:

    beta(e) = min(max(beta_min + (e - e_min) / (e_max - e_min), beta_min), beta_max)

so early epochs (inaccurate model, misleading entropies) plan greedily and
exploration pressure grows as the model trains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathcore import LN_2PI, RngStream, entropy_from_variances


class PlanningFailureError(RuntimeError):
    """All candidate trajectories diverged; no action can be ranked."""


@dataclass
class PlanConfig:
    """CEM/MPC knobs.  Defaults are the paper-scale settings; desk presets shrink them."""

    K: int = 500                    # candidate trajectories per iteration
    horizon: int = 30               # imagined steps per trajectory
    elite_count: int = 100
    alpha: float = 0.01             # distribution smoothing rate
    max_iterations: int = 20
    convergence_tol: float = 1e-3   # early stop on best-return improvement
    gamma: float = 1.0              # planning discount inside the horizon
    mu0: float = 0.0
    sigma0: float = 0.1
    variance_floor: float = 1e-6
    fit_first_action_only: bool = False  # literal one-timestep elite fit, for comparison

    def validate(self):
        if not (1 <= self.elite_count <= self.K):
            raise ValueError("need 1 <= elite_count <= K")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")
        return self


@dataclass
class ExplorationSchedule:
    """Temperature schedule for the entropy bonus.

    mode "progressive" ramps linearly from beta_min to beta_max between
    epochs e_min and e_max; "fixed" always returns `fixed_beta`; "off" always
    returns 0 (pure exploitation, the no-exploration baseline).
    """

    mode: str = "progressive"
    beta_min: float = 0.0
    beta_max: float = 1.0
    e_min: int = 50
    e_max: int = 300
    fixed_beta: float = 1.0

    def validate(self):
        if self.mode not in ("progressive", "fixed", "off"):
            raise ValueError(f"unknown schedule mode '{self.mode}'")
        if self.e_min >= self.e_max:
            raise ValueError("need e_min < e_max")
        if self.beta_min > self.beta_max:
            raise ValueError("need beta_min <= beta_max")
        return self


def temperature(schedule: ExplorationSchedule, epoch: int) -> float:
    """Exploration temperature beta for a given interaction epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.mode == "off":
        return 0.0
    if schedule.mode == "fixed":
        return schedule.fixed_beta
    ramp = schedule.beta_min + (epoch - schedule.e_min) / (schedule.e_max - schedule.e_min)
    return min(max(ramp, schedule.beta_min), schedule.beta_max)


@dataclass
class ImaginedTrajectory:
    """One model rollout: actions taken, states visited, per-step reward and entropy.

    states[0] is the given start state; states[t] for t >= 1 are sampled from
    the assigned member's predicted distribution.  entropies[t] is the
    entropy of the distribution that generated s_{t+1}, evaluated at
    (s_t, a_t).  `total_return` is filled by `score`; `valid` goes false if a
    sampled state leaves the finite range, in which case the trajectory is
    ranked at -inf.
    """

    actions: np.ndarray            # (H, action_dim)
    states: np.ndarray             # (H, state_dim)
    extrinsic_rewards: np.ndarray  # (H,)
    entropies: np.ndarray          # (H,)
    member_index: int = 0
    valid: bool = True
    total_return: float = float("nan")


@dataclass
class ActionSequenceDistribution:
    """Independent diagonal Gaussian over the action at each of H timesteps."""

    mu: np.ndarray        # (H, action_dim)
    variance: np.ndarray  # (H, action_dim)
    variance_floor: float = 1e-6

    @classmethod
    def initial(cls, horizon, action_dim, mu0, sigma0, variance_floor=1e-6):
        return cls(
            mu=np.full((horizon, action_dim), float(mu0)),
            variance=np.full((horizon, action_dim), max(float(sigma0) ** 2, variance_floor)),
            variance_floor=variance_floor,
        )

    def smooth_update(self, mu_fit, var_fit, alpha, timestep=None):
        """mu <- (1-a) mu + a mu'; same for the variance, then floor it."""
        if timestep is None:
            self.mu = (1.0 - alpha) * self.mu + alpha * mu_fit
            self.variance = (1.0 - alpha) * self.variance + alpha * var_fit
        else:
            self.mu[timestep] = (1.0 - alpha) * self.mu[timestep] + alpha * mu_fit
            self.variance[timestep] = (1.0 - alpha) * self.variance[timestep] + alpha * var_fit
        self.variance = np.maximum(self.variance, self.variance_floor)


def rollout(model, reward, s0, action_seq, member_index: int,
            rng: RngStream) -> ImaginedTrajectory:
    """Roll one action sequence through one ensemble member.

    Draws s_{t+1} from the member's predicted Gaussian at (s_t, a_t) using
    `rng`; records the prediction's entropy and the reward net's r(s_t, a_t).
    """
    s0 = np.asarray(s0, dtype=np.float64)
    action_seq = np.atleast_2d(np.asarray(action_seq, dtype=np.float64))
    horizon = action_seq.shape[0]
    state_dim = s0.shape[0]
    states = np.zeros((horizon, state_dim))
    rewards = np.zeros(horizon)
    entropies = np.zeros(horizon)
    gen = rng.gen
    state = s0
    valid = True
    for t in range(horizon):
        states[t] = state
        a = action_seq[t]
        rewards[t] = reward.predict_batch(state[None, :], a[None, :])[0]
        means, variances = model.predict_batch(member_index, state[None, :], a[None, :])
        entropies[t] = entropy_from_variances(variances[0])
        state = means[0] + np.sqrt(variances[0]) * gen.standard_normal(state_dim)
        if not np.all(np.isfinite(state)):
            valid = False
            state = np.zeros(state_dim)
    if not np.all(np.isfinite(rewards)) or not np.all(np.isfinite(entropies)):
        valid = False
    traj = ImaginedTrajectory(actions=action_seq, states=states,
                              extrinsic_rewards=rewards, entropies=entropies,
                              member_index=member_index, valid=valid)
    if not valid:
        traj.total_return = float("-inf")
    return traj


def score(traj: ImaginedTrajectory, beta: float, gamma: float) -> float:
    """Discounted trajectory return: sum_t gamma^t (r_t + beta * entropy_t)."""
    if not traj.valid:
        return float("-inf")
    horizon = traj.extrinsic_rewards.shape[0]
    discounts = gamma ** np.arange(horizon)
    return float(np.sum(discounts * (traj.extrinsic_rewards + beta * traj.entropies)))


@dataclass
class PlanDiagnostics:
    epoch: int
    beta: float
    iterations_used: int
    best_return: float
    elite_return_mean: float
    elite_return_std: float
    per_iteration_best: list[float] = field(default_factory=list)


def _select_elites(returns: np.ndarray, elite_count: int) -> np.ndarray:
    """Indices of the top candidates by return; ties broken by lower index."""
    order = np.argsort(-returns, kind="stable")
    n_valid = int(np.sum(np.isfinite(returns)))
    return order[:min(elite_count, max(n_valid, 0))]


def plan_action(model, reward, s0, epoch, cfg: PlanConfig,
                schedule: ExplorationSchedule, rng: RngStream,
                action_low, action_high):
    """One MPC planning call; returns (first action of best trajectory, diagnostics).

    All candidate rollouts for iteration i consume disjoint slices of noise
    drawn up front from rng.child(i), so the result is independent of any
    parallel execution order over candidates.  Model and reward nets are only
    read.
    """
    cfg.validate()
    schedule.validate()
    s0 = np.asarray(s0, dtype=np.float64)
    if not np.all(np.isfinite(s0)):
        raise ValueError("start state contains non-finite values")
    action_low = np.asarray(action_low, dtype=np.float64)
    action_high = np.asarray(action_high, dtype=np.float64)
    beta = temperature(schedule, epoch)
    K, H = cfg.K, cfg.horizon
    action_dim = action_low.shape[0]
    state_dim = s0.shape[0]
    num_members = model.num_members
    discounts = cfg.gamma ** np.arange(H)

    dist = ActionSequenceDistribution.initial(H, action_dim, cfg.mu0, cfg.sigma0,
                                              cfg.variance_floor)
    best_return = float("-inf")
    best_action = None
    prev_iter_best = None
    per_iteration_best: list[float] = []
    elite_mean = elite_std = float("nan")
    iterations_used = 0

    for iteration in range(cfg.max_iterations):
        gen = rng.child(iteration).gen
        members = gen.integers(0, num_members, size=K)
        action_eps = gen.standard_normal((K, H, action_dim))
        state_eps = gen.standard_normal((K, H, state_dim))

        actions = np.clip(dist.mu + np.sqrt(dist.variance) * action_eps,
                          action_low, action_high)

        states_t = np.broadcast_to(s0, (K, state_dim)).copy()
        returns = np.zeros(K)
        valid = np.ones(K, dtype=bool)
        for t in range(H):
            a_t = actions[:, t, :]
            r_t = reward.predict_batch(states_t, a_t)
            means = np.empty((K, state_dim))
            variances = np.empty((K, state_dim))
            for b in range(num_members):
                rows = np.nonzero(members == b)[0]
                if rows.size == 0:
                    continue
                means[rows], variances[rows] = model.predict_batch(
                    b, states_t[rows], a_t[rows])
            entropy_t = 0.5 * state_dim * (LN_2PI + 1.0) \
                + 0.5 * np.sum(np.log(variances), axis=1)
            returns += discounts[t] * (r_t + beta * entropy_t)
            states_t = means + np.sqrt(variances) * state_eps[:, t, :]
            bad = ~np.all(np.isfinite(states_t), axis=1)
            if np.any(bad):
                valid &= ~bad
                states_t[bad] = 0.0
        valid &= np.isfinite(returns)
        returns[~valid] = float("-inf")
        if not np.any(valid):
            raise PlanningFailureError(
                f"all {K} candidate trajectories diverged at iteration {iteration}")

        elites = _select_elites(returns, cfg.elite_count)
        iterations_used = iteration + 1
        iter_best_idx = int(elites[0])
        iter_best = float(returns[iter_best_idx])
        per_iteration_best.append(iter_best)
        if iter_best > best_return:
            best_return = iter_best
            best_action = actions[iter_best_idx, 0, :].copy()

        elite_returns = returns[elites]
        elite_mean = float(np.mean(elite_returns))
        elite_std = float(np.std(elite_returns))
        elite_actions = actions[elites]
        if cfg.fit_first_action_only:
            dist.smooth_update(elite_actions[:, 0, :].mean(axis=0),
                               elite_actions[:, 0, :].var(axis=0),
                               cfg.alpha, timestep=0)
        else:
            dist.smooth_update(elite_actions.mean(axis=0),
                               elite_actions.var(axis=0), cfg.alpha)

        if prev_iter_best is not None and \
                iter_best - prev_iter_best < cfg.convergence_tol:
            break
        prev_iter_best = iter_best

    diagnostics = PlanDiagnostics(
        epoch=int(epoch), beta=float(beta), iterations_used=iterations_used,
        best_return=best_return, elite_return_mean=elite_mean,
        elite_return_std=elite_std, per_iteration_best=per_iteration_best,
    )
    return best_action, diagnostics
