"""Learned dynamics and reward models.

The dynamics model is an ensemble of independent probabilistic nets, each
mapping a normalized (state, action) pair to a Gaussian over the next state
with diagonal covariance.  Nets predict the state *delta* s' - s; the mean
head output is added back onto the input state at the boundary, which is the
standard stabilization for near-identity transitions.

Training minimizes, per member, the Gaussian negative log-likelihood

    sum_n (mu - s'_n)^T Sigma^{-1} (mu - s'_n) + log det Sigma

on a bootstrap resample of the replay buffer (members differ by both
initialization and resample).  The reward net is a plain MSE regressor on
(state, action) -> r.  Both use adaptive-moment gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathcore import DiagonalGaussian, RngStream
from .nets import Adam, FeedforwardNet


class NonFiniteInputError(ValueError):
    """Raised when a model query contains NaN or infinity."""


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite values")


@dataclass
class TrainConfig:
    """Knobs for one model/reward update from the replay buffer.

    Gradient epochs, batch size and learning rate are pilot-calibrated
    defaults; `hidden` is the desk-scale architecture, (500, 500, 500) is
    the paper-scale preset.
    """

    ensemble_size: int = 4
    hidden: tuple[int, ...] = (64, 64)
    reward_hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    reward_learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    logvar_min: float = -10.0
    logvar_max: float = 4.0
    bootstrap: bool = True

    def validate(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.logvar_min < self.logvar_max:
            raise ValueError("logvar_min must be < logvar_max")
        return self


@dataclass
class Normalizer:
    """Per-dimension shift/scale fit on real-environment (state, action) pairs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    @classmethod
    def fit(cls, inputs: np.ndarray) -> "Normalizer":
        mean = inputs.mean(axis=0)
        std = inputs.std(axis=0)
        return cls(mean=mean, std=np.maximum(std, 1e-8))

    def apply(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.mean) / self.std


class ReplayBuffer:
    """Ordered store of (state, action, next_state, reward) transitions.

    Insertion order is preserved so seeded minibatching is reproducible.
    With a finite capacity the oldest transitions fall off the front.
    """

    def __init__(self, state_dim: int, action_dim: int, capacity: int | None = None):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive or None")
        self.capacity = capacity
        self._records: list[tuple[np.ndarray, np.ndarray, np.ndarray, float]] = []

    def __len__(self) -> int:
        return len(self._records)

    def add(self, state, action, next_state, reward: float) -> None:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        next_state = np.asarray(next_state, dtype=np.float64)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ValueError("state dimension mismatch")
        if action.shape != (self.action_dim,):
            raise ValueError("action dimension mismatch")
        self._records.append((state.copy(), action.copy(), next_state.copy(), float(reward)))
        if self.capacity is not None and len(self._records) > self.capacity:
            del self._records[0]

    def arrays(self):
        """(states, actions, next_states, rewards) as stacked float64 arrays."""
        if not self._records:
            raise ValueError("replay buffer is empty")
        s = np.stack([r[0] for r in self._records])
        a = np.stack([r[1] for r in self._records])
        ns = np.stack([r[2] for r in self._records])
        rew = np.array([r[3] for r in self._records], dtype=np.float64)
        return s, a, ns, rew


class EnsembleModel:
    """Ensemble of probabilistic dynamics nets plus the shared input normalizer."""

    def __init__(self, state_dim, action_dim, cfg: TrainConfig, rng: RngStream):
        cfg.validate()
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.cfg = cfg
        self.members = [
            FeedforwardNet(
                self.state_dim + self.action_dim, cfg.hidden, self.state_dim,
                probabilistic=True, rng=rng.child(b),
                logvar_min=cfg.logvar_min, logvar_max=cfg.logvar_max,
            )
            for b in range(cfg.ensemble_size)
        ]
        self.normalizer = Normalizer.identity(self.state_dim + self.action_dim)

    @property
    def num_members(self) -> int:
        return len(self.members)

    def _inputs(self, states, actions):
        return self.normalizer.apply(np.concatenate([states, actions], axis=-1))

    def predict_batch(self, member_index: int, states, actions):
        """Per-row next-state (means, variances) from one member; delta + clamp applied."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        _check_finite("states", states)
        _check_finite("actions", actions)
        delta_mean, logvar = self.members[member_index].forward(self._inputs(states, actions))
        return states + delta_mean, np.exp(logvar)

    def predict(self, member_index: int, state, action) -> DiagonalGaussian:
        means, variances = self.predict_batch(member_index, state[None, :], action[None, :])
        return DiagonalGaussian(mean=means[0], variance=variances[0])


class RewardNet:
    """Scalar reward regressor r(s, a); shares the ensemble's input normalization."""

    def __init__(self, state_dim, action_dim, cfg: TrainConfig, rng: RngStream):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.net = FeedforwardNet(
            self.state_dim + self.action_dim, cfg.reward_hidden, 1,
            probabilistic=False, rng=rng,
        )
        self.normalizer = Normalizer.identity(self.state_dim + self.action_dim)

    def predict_batch(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        _check_finite("states", states)
        _check_finite("actions", actions)
        inputs = self.normalizer.apply(np.concatenate([states, actions], axis=-1))
        return self.net.forward(inputs)[:, 0]

    def predict(self, state, action) -> float:
        return float(self.predict_batch(state[None, :], action[None, :])[0])


def predict_reward(reward: RewardNet, state, action) -> float:
    return reward.predict(np.asarray(state, dtype=np.float64),
                          np.asarray(action, dtype=np.float64))


def nll_loss(model: EnsembleModel, member_index: int, states, actions, next_states):
    """Gaussian NLL of a batch under one member, with exact parameter gradients.

    loss = sum_n sum_i [ (mu_ni - s'_ni)^2 / var_ni + ln var_ni ]

    which for diagonal covariance is the quadratic-plus-logdet objective the
    ensemble is trained on.  Returns (loss, grads) with grads aligned to the
    member's `param_arrays()`.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    net = model.members[member_index]
    targets = next_states - states            # delta parameterization
    mean, logvar, cache = net.forward_cache(model._inputs(states, actions))
    inv_var = np.exp(-logvar)
    resid = mean - targets
    loss = float(np.sum(resid * resid * inv_var + logvar))
    d_mean = 2.0 * resid * inv_var
    d_logvar = 1.0 - resid * resid * inv_var
    return loss, net.backward(cache, d_mean, d_logvar)


def reward_mse_loss(reward: RewardNet, states, actions, targets):
    """Mean-squared error of the reward net on a batch, with exact gradients."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    n = states.shape[0]
    inputs = reward.normalizer.apply(np.concatenate([states, actions], axis=-1))
    pred, _, cache = reward.net.forward_cache(inputs)
    resid = pred - targets
    loss = float(np.mean(resid * resid))
    return loss, reward.net.backward(cache, 2.0 * resid / n)


@dataclass
class TrainReport:
    """Losses observed during one `train_models` call.

    `member_losses[b][k]` is member b's mean per-sample NLL over gradient
    epoch k of its bootstrap view; `reward_mse[k]` likewise for the reward
    net.  `wall_time` and `update_index` let callers assert *when* gradient
    steps happened (e.g. none before warmup data exists).
    """

    member_losses: list[list[float]] = field(default_factory=list)
    reward_mse: list[float] = field(default_factory=list)
    buffer_size: int = 0
    update_index: int = 0
    wall_time: float = 0.0

    @property
    def final_member_loss_mean(self) -> float:
        if not self.member_losses:
            return float("nan")
        return float(np.mean([m[-1] for m in self.member_losses]))


def bootstrap_indices(n: int, rng: RngStream) -> np.ndarray:
    """Sampling-with-replacement index set of size n."""
    return rng.gen.integers(0, n, size=n)


def train_models(model: EnsembleModel, reward: RewardNet, buffer: ReplayBuffer,
                 train_cfg: TrainConfig, rng: RngStream,
                 update_index: int = 0) -> TrainReport:
    """One full update of every ensemble member and the reward net.

    The normalizer is refreshed from the whole buffer first (real transitions
    only live there).  Each member then trains on its own bootstrap resample
    for `epochs` gradient epochs of seeded shuffled minibatches; the reward
    net trains on the full buffer with MSE.  Deterministic given (buffer
    contents, rng identity).
    """
    import time

    train_cfg.validate()
    if len(buffer) == 0:
        raise ValueError("cannot train from an empty replay buffer")
    t0 = time.perf_counter()
    states, actions, next_states, rewards = buffer.arrays()
    n = states.shape[0]

    stats = Normalizer.fit(np.concatenate([states, actions], axis=1))
    model.normalizer = stats
    reward.normalizer = stats

    report = TrainReport(buffer_size=n, update_index=update_index)
    batch = min(train_cfg.batch_size, n)

    for b, net in enumerate(model.members):
        member_rng = rng.child(b)
        idx = bootstrap_indices(n, member_rng.child(0)) if train_cfg.bootstrap \
            else np.arange(n)
        opt = Adam(net, lr=train_cfg.learning_rate)
        losses = []
        for epoch in range(train_cfg.epochs):
            order = member_rng.child(1 + epoch).gen.permutation(len(idx))
            total = 0.0
            for start in range(0, len(idx), batch):
                rows = idx[order[start:start + batch]]
                loss, grads = nll_loss(model, b, states[rows], actions[rows],
                                       next_states[rows])
                opt.step(grads)
                total += loss
            losses.append(total / len(idx))
        report.member_losses.append(losses)

    reward_rng = rng.child(len(model.members))
    opt = Adam(reward.net, lr=train_cfg.reward_learning_rate)
    for epoch in range(train_cfg.epochs):
        order = reward_rng.child(epoch).gen.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            loss, grads = reward_mse_loss(reward, states[rows], actions[rows],
                                          rewards[rows])
            opt.step(grads)
            total += loss * len(rows)
        report.reward_mse.append(total / n)

    report.wall_time = time.perf_counter() - t0
    return report


# -- checkpointing -----------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: EnsembleModel, reward: RewardNet) -> None:
    """Serialize architecture, normalizer stats and all parameters; lossless."""
    cfg = model.cfg
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "state_dim": np.array(model.state_dim),
        "action_dim": np.array(model.action_dim),
        "ensemble_size": np.array(cfg.ensemble_size),
        "hidden": np.array(cfg.hidden),
        "reward_hidden": np.array(cfg.reward_hidden),
        "logvar_min": np.array(cfg.logvar_min),
        "logvar_max": np.array(cfg.logvar_max),
        "normalizer_mean": model.normalizer.mean,
        "normalizer_std": model.normalizer.std,
        "reward_normalizer_mean": reward.normalizer.mean,
        "reward_normalizer_std": reward.normalizer.std,
    }
    for b, net in enumerate(model.members):
        for k, arr in enumerate(net.param_arrays()):
            arrays[f"member{b}_p{k}"] = arr
    for k, arr in enumerate(reward.net.param_arrays()):
        arrays[f"reward_p{k}"] = arr
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[EnsembleModel, RewardNet]:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cfg = TrainConfig(
            ensemble_size=int(data["ensemble_size"]),
            hidden=tuple(int(h) for h in data["hidden"]),
            reward_hidden=tuple(int(h) for h in data["reward_hidden"]),
            logvar_min=float(data["logvar_min"]),
            logvar_max=float(data["logvar_max"]),
        )
        state_dim = int(data["state_dim"])
        action_dim = int(data["action_dim"])
        seed_rng = RngStream(0)  # weights are overwritten below
        model = EnsembleModel(state_dim, action_dim, cfg, seed_rng)
        reward = RewardNet(state_dim, action_dim, cfg, seed_rng)
        for b, net in enumerate(model.members):
            for k, arr in enumerate(net.param_arrays()):
                arr[...] = data[f"member{b}_p{k}"]
        for k, arr in enumerate(reward.net.param_arrays()):
            arr[...] = data[f"reward_p{k}"]
        model.normalizer = Normalizer(mean=data["normalizer_mean"].copy(),
                                      std=data["normalizer_std"].copy())
        reward.normalizer = Normalizer(mean=data["reward_normalizer_mean"].copy(),
                                       std=data["reward_normalizer_std"].copy())
    return model, reward
