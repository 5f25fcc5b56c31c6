"""Exact trajectory-reward error-bound verification on tabular MDPs.

A planner scores an imagined trajectory with the model's reward and
transition tables; the environment pays out with its own.  For a trajectory
distribution started at a fixed (s0, a0) and continued by a stochastic
policy, the gap between the two H-step discounted expected returns obeys

    J_env - J_model  <=  (1 - g^H) eps_rmax / (1 - g)
                       + 2 r_max (g - g^H) eps_m / (1 - g)

with eps_rmax the largest absolute reward-table gap over all state-action
pairs, eps_m the largest total-variation distance between matching
transition rows, and r_max the largest absolute true reward.  This module
computes both sides exactly by propagating occupancy distributions, so the
inequality can be stress-tested instance by instance.

Note eps_m here is a max over *all* (s, a) pairs, which upper-bounds any
per-trajectory max, so the verified inequality is the weaker-assumption (and
still valid) form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import RngStream

_ROW_SUM_TOL = 1e-12


def _check_stochastic(name: str, table: np.ndarray, axis: int):
    if np.any(table < 0):
        raise ValueError(f"{name} has negative entries")
    sums = table.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
        raise ValueError(f"{name} rows must sum to 1 within {_ROW_SUM_TOL}")


@dataclass
class TabularMDP:
    """Finite MDP: transition tensor p(s'|s,a), reward table r(s,a), discount."""

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray      # (S, A)
    gamma: float

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        S, A, S2 = self.transition.shape
        if S != S2:
            raise ValueError("transition tensor must be (S, A, S)")
        if self.reward.shape != (S, A):
            raise ValueError("reward table must be (S, A)")
        _check_stochastic("transition", self.transition, axis=2)
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]


@dataclass
class TabularModel:
    """A learned stand-in for the MDP: perturbed transition and reward tables."""

    transition: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        S, A, S2 = self.transition.shape
        if S != S2 or self.reward.shape != (S, A):
            raise ValueError("model tables have inconsistent shapes")
        _check_stochastic("model transition", self.transition, axis=2)


@dataclass
class TabularPolicy:
    """Stochastic policy table pi(a|s)."""

    table: np.ndarray  # (S, A)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        _check_stochastic("policy", self.table, axis=1)


@dataclass
class BoundReport:
    tree_error: float
    bound_value: float
    epsilon_r_max: float
    epsilon_m: float
    r_max: float
    reward_gap_term: float
    model_error_term: float
    holds: bool


def expected_return(transition, reward, policy: TabularPolicy, s0: int, a0: int,
                    gamma: float, H: int) -> float:
    """Exact H-step discounted expected return from a fixed (s0, a0).

    Term t contributes gamma^t E[r(s_t, a_t)] with a_t ~ pi for t >= 1,
    computed by propagating the state occupancy distribution; no sampling.
    """
    transition = np.asarray(transition, dtype=np.float64)
    reward = np.asarray(reward, dtype=np.float64)
    S, A, S2 = transition.shape
    if S != S2 or reward.shape != (S, A) or policy.table.shape != (S, A):
        raise ValueError("transition, reward, and policy shapes are inconsistent")
    if H < 1:
        raise ValueError("H must be >= 1")
    total = float(reward[s0, a0])
    if H == 1:
        return total
    state_reward = np.sum(policy.table * reward, axis=1)     # E_pi[r | s]
    occupancy = transition[s0, a0].copy()                    # distribution of s_1
    for t in range(1, H):
        total += gamma ** t * float(occupancy @ state_reward)
        if t + 1 < H:
            # s_{t+1} distribution: sum_s sum_a d(s) pi(a|s) p(s'|s,a)
            occupancy = np.einsum("s,sa,sap->p", occupancy, policy.table, transition)
    return total


def model_error_tv(mdp: TabularMDP, model: TabularModel) -> float:
    """Largest total-variation distance between matching transition rows."""
    if model.transition.shape != mdp.transition.shape:
        raise ValueError("model and MDP transition shapes differ")
    return float(0.5 * np.max(np.sum(np.abs(mdp.transition - model.transition), axis=2)))


def verify_bound(mdp: TabularMDP, model: TabularModel, policy: TabularPolicy,
                 s0: int, a0: int, H: int, tol: float = 1e-9) -> BoundReport:
    """Compute the exact return gap and both bound terms; check the inequality."""
    gamma = mdp.gamma
    if gamma >= 1.0:
        raise ValueError("the bound is undefined at gamma = 1")
    if H < 1:
        raise ValueError("H must be >= 1")
    j_env = expected_return(mdp.transition, mdp.reward, policy, s0, a0, gamma, H)
    j_model = expected_return(model.transition, model.reward, policy, s0, a0, gamma, H)
    tree_error = j_env - j_model
    epsilon_r_max = float(np.max(np.abs(mdp.reward - model.reward)))
    epsilon_m = model_error_tv(mdp, model)
    r_max = float(np.max(np.abs(mdp.reward)))
    reward_gap_term = (1.0 - gamma ** H) * epsilon_r_max / (1.0 - gamma)
    model_error_term = 2.0 * r_max * (gamma - gamma ** H) * epsilon_m / (1.0 - gamma)
    bound_value = reward_gap_term + model_error_term
    return BoundReport(
        tree_error=tree_error, bound_value=bound_value,
        epsilon_r_max=epsilon_r_max, epsilon_m=epsilon_m, r_max=r_max,
        reward_gap_term=reward_gap_term, model_error_term=model_error_term,
        holds=bool(tree_error <= bound_value + tol),
    )


# -- randomized instance generation ------------------------------------------


def random_mdp(num_states: int, num_actions: int, gamma: float,
               rng: RngStream) -> TabularMDP:
    """Dirichlet(1) transition rows, uniform[0, 1] rewards."""
    gen = rng.gen
    transition = gen.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    reward = gen.uniform(0.0, 1.0, size=(num_states, num_actions))
    return TabularMDP(transition=transition, reward=reward, gamma=gamma)


def perturbed_model(mdp: TabularMDP, transition_scale: float, reward_noise: float,
                    rng: RngStream) -> TabularModel:
    """Model tables: rows mixed with fresh Dirichlet draws, rewards jittered.

    p_hat(.|s,a) = (1 - scale) p(.|s,a) + scale Dirichlet(1)
    r_m = r_e + U(-reward_noise, reward_noise)
    """
    if not (0.0 <= transition_scale <= 1.0):
        raise ValueError("transition_scale must lie in [0, 1]")
    gen = rng.gen
    S, A = mdp.num_states, mdp.num_actions
    noise_rows = gen.dirichlet(np.ones(S), size=(S, A))
    transition = (1.0 - transition_scale) * mdp.transition + transition_scale * noise_rows
    reward = mdp.reward + gen.uniform(-reward_noise, reward_noise, size=(S, A))
    return TabularModel(transition=transition, reward=reward)


def random_policy(num_states: int, num_actions: int, rng: RngStream) -> TabularPolicy:
    return TabularPolicy(rng.gen.dirichlet(np.ones(num_actions), size=num_states))


def greedy_model_policy(model: TabularModel, gamma: float,
                        iterations: int = 200) -> TabularPolicy:
    """Deterministic policy greedy for the *model* (value iteration on its tables).

    Probes the adversarial-ish case: the policy chases model reward, so the
    true environment tends to pay out less than the model promises.
    """
    S, A = model.reward.shape
    values = np.zeros(S)
    for _ in range(iterations):
        q = model.reward + gamma * model.transition @ values
        values = q.max(axis=1)
    q = model.reward + gamma * model.transition @ values
    table = np.zeros((S, A))
    table[np.arange(S), q.argmax(axis=1)] = 1.0
    return TabularPolicy(table)


@dataclass
class StressInstance:
    mdp: TabularMDP
    model: TabularModel
    policy: TabularPolicy
    s0: int
    a0: int
    H: int
    transition_scale: float
    reward_noise: float
    policy_kind: str  # "random" or "greedy-model"


def generate_instances(count: int, seed: int, *,
                       max_states: int = 8, max_actions: int = 4,
                       max_horizon: int = 10, gammas=(0.9, 0.99),
                       max_transition_scale: float = 0.75,
                       max_reward_noise: float = 0.5,
                       zero_perturbation_every: int = 10):
    """Deterministic stream of randomized verification instances.

    Every `zero_perturbation_every`-th instance uses an exact copy of the MDP
    as the model (the equality-at-zero case).  Policies alternate between
    random stochastic tables and the greedy policy of the perturbed model.
    """
    root = RngStream(seed, (0x7B,))
    for i in range(count):
        inst_rng = root.child(i)
        gen = inst_rng.child(0).gen
        S = int(gen.integers(2, max_states + 1))
        A = int(gen.integers(1, max_actions + 1))
        H = int(gen.integers(1, max_horizon + 1))
        gamma = float(gammas[int(gen.integers(0, len(gammas)))])
        mdp = random_mdp(S, A, gamma, inst_rng.child(1))
        if zero_perturbation_every and i % zero_perturbation_every == 0:
            t_scale, r_noise = 0.0, 0.0
        else:
            t_scale = float(gen.uniform(0.0, max_transition_scale))
            r_noise = float(gen.uniform(0.0, max_reward_noise))
        model = perturbed_model(mdp, t_scale, r_noise, inst_rng.child(2))
        if i % 2 == 0:
            policy = random_policy(S, A, inst_rng.child(3))
            kind = "random"
        else:
            policy = greedy_model_policy(model, gamma)
            kind = "greedy-model"
        s0 = int(gen.integers(0, S))
        a0 = int(gen.integers(0, A))
        yield StressInstance(mdp=mdp, model=model, policy=policy, s0=s0, a0=a0,
                             H=H, transition_scale=t_scale, reward_noise=r_noise,
                             policy_kind=kind)


@dataclass
class SweepRow:
    gamma: float
    H: int
    transition_scale: float
    instances: int
    exact_zero_cases: int
    mean_tree_error: float
    max_ratio: float
    mean_ratio: float
    violations: int


def tightness_sweep(*, seed: int = 0, instances_per_cell: int = 50,
                    gammas=(0.9, 0.99), horizons=(2, 5, 10),
                    transition_scales=(0.0, 0.1, 0.3, 0.6),
                    num_states: int = 6, num_actions: int = 3,
                    reward_noise: float = 0.1) -> list[SweepRow]:
    """How loose is the bound across (gamma, H, perturbation scale)?

    Ratios are tree_error / bound_value over instances with a nonzero bound;
    zero-perturbation cells report the exact-zero case count instead.
    Deterministic given `seed`.
    """
    rows = []
    cell = 0
    for gamma in gammas:
        for H in horizons:
            for t_scale in transition_scales:
                cell += 1
                root = RngStream(seed, (0x5E, cell))
                ratios, errors = [], []
                exact_zero = violations = 0
                for i in range(instances_per_cell):
                    inst = root.child(i)
                    mdp = random_mdp(num_states, num_actions, gamma, inst.child(0))
                    noise = 0.0 if t_scale == 0.0 else reward_noise
                    model = perturbed_model(mdp, t_scale, noise, inst.child(1))
                    policy = random_policy(num_states, num_actions, inst.child(2))
                    gen = inst.child(3).gen
                    report = verify_bound(mdp, model, policy,
                                          int(gen.integers(0, num_states)),
                                          int(gen.integers(0, num_actions)), H)
                    errors.append(report.tree_error)
                    if not report.holds:
                        violations += 1
                    if report.bound_value == 0.0:
                        exact_zero += 1
                    else:
                        ratios.append(report.tree_error / report.bound_value)
                rows.append(SweepRow(
                    gamma=gamma, H=H, transition_scale=t_scale,
                    instances=instances_per_cell, exact_zero_cases=exact_zero,
                    mean_tree_error=float(np.mean(errors)),
                    max_ratio=float(np.max(ratios)) if ratios else float("nan"),
                    mean_ratio=float(np.mean(ratios)) if ratios else float("nan"),
                    violations=violations,
                ))
    return rows
