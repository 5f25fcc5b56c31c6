"""Analytic desk-scale continuous-control environments.

Each environment is noise-free by default (predictive entropy of a learned
model then reflects what the model has not seen, not environment noise) and
steps with semi-implicit Euler at a fixed dt.  `transition` and `reward_fn`
are pure functions of (state, action) so tests and oracle models can call the
exact dynamics directly; `step` adds episode bookkeeping on top.

Reward convention: r(s_t, a_t) is computed from the state the action is taken
in, before the transition.  Episodes end when the step counter reaches
`horizon`; there are no early terminations.
"""

from __future__ import annotations

import numpy as np

from .mathcore import RngStream


def _wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    wrapped = (theta + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if wrapped == -np.pi else wrapped


class Environment:
    """Base class: bounds, bookkeeping, optional additive process noise."""

    name: str = "base"
    state_dim: int
    action_dim: int

    def __init__(self, horizon: int = 200, noise_std: float = 0.0,
                 noise_seed: int = 0):
        self.horizon = int(horizon)
        self.noise_std = float(noise_std)
        self._noise_rng = RngStream(noise_seed, (0xE0,)) if noise_std > 0 else None
        self.step_count = 0
        self.last_action_clipped = False
        self.clipped_action_count = 0
        self._state: np.ndarray | None = None

    # subclasses implement these three
    def _initial_state(self, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def transition(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reward_fn(self, state: np.ndarray, action: np.ndarray) -> float:
        raise NotImplementedError

    @property
    def state(self) -> np.ndarray:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state.copy()

    def reset(self, rng: RngStream) -> np.ndarray:
        self._state = np.asarray(self._initial_state(rng), dtype=np.float64)
        self.step_count = 0
        return self._state.copy()

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self._state is None:
            raise RuntimeError("environment not reset")
        action = np.asarray(action, dtype=np.float64).reshape(self.action_dim)
        if not np.all(np.isfinite(action)):
            raise ValueError("action contains non-finite values")
        clipped = np.clip(action, self.action_low, self.action_high)
        self.last_action_clipped = bool(np.any(clipped != action))
        if self.last_action_clipped:
            self.clipped_action_count += 1
        reward = self.reward_fn(self._state, clipped)
        next_state = self.transition(self._state, clipped)
        if self._noise_rng is not None:
            next_state = next_state + self.noise_std * \
                self._noise_rng.gen.standard_normal(self.state_dim)
        self._state = next_state
        self.step_count += 1
        return next_state.copy(), float(reward), self.step_count >= self.horizon


class PendulumSwingUp(Environment):
    """Torque-limited rigid rod pivoted at one end; angle measured from upright.

    state = [theta, omega], theta in (-pi, pi] with 0 = upright, action =
    torque in [-max_torque, max_torque].  Dynamics (uniform rod, moment of
    inertia m l^2 / 3, gravity torque m g (l/2) sin theta):

        omega' = clip(omega + dt * (1.5 g/l sin theta + 3 a / (m l^2)), +-max_speed)
        theta' = wrap(theta + dt * omega')

    reward = -(theta^2 + 0.1 omega^2 + 0.001 a^2).  Constants: m = 1, l = 1,
    g = 10, dt = 0.05, max_torque = 2, max_speed = 8.  Reset draws theta
    uniform in (-pi, pi], omega uniform in [-1, 1].
    """

    name = "pendulum_swingup"
    state_dim = 2
    action_dim = 1

    def __init__(self, horizon=200, dt=0.05, mass=1.0, length=1.0, gravity=10.0,
                 max_torque=2.0, max_speed=8.0, noise_std=0.0, noise_seed=0):
        super().__init__(horizon=horizon, noise_std=noise_std, noise_seed=noise_seed)
        self.dt = float(dt)
        self.mass = float(mass)
        self.length = float(length)
        self.gravity = float(gravity)
        self.max_torque = float(max_torque)
        self.max_speed = float(max_speed)
        self.action_low = np.array([-self.max_torque])
        self.action_high = np.array([self.max_torque])

    @property
    def r_max(self) -> float:
        """Exact max |reward| over theta in (-pi,pi], |omega|<=max_speed, |a|<=max_torque."""
        return np.pi ** 2 + 0.1 * self.max_speed ** 2 + 0.001 * self.max_torque ** 2

    def _initial_state(self, rng: RngStream):
        g = rng.gen
        return np.array([g.uniform(-np.pi, np.pi), g.uniform(-1.0, 1.0)])

    def transition(self, state, action):
        theta, omega = state
        torque = float(action[0])
        accel = (1.5 * self.gravity / self.length * np.sin(theta)
                 + 3.0 * torque / (self.mass * self.length ** 2))
        omega_new = np.clip(omega + self.dt * accel, -self.max_speed, self.max_speed)
        theta_new = _wrap_angle(theta + self.dt * omega_new)
        return np.array([theta_new, omega_new])

    def reward_fn(self, state, action):
        theta, omega = state
        return -(theta ** 2 + 0.1 * omega ** 2 + 0.001 * float(action[0]) ** 2)

    def energy(self, state) -> float:
        """Total mechanical energy of the free rod (potential zero at pivot height)."""
        theta, omega = state
        inertia = self.mass * self.length ** 2 / 3.0
        return 0.5 * inertia * omega ** 2 \
            + self.mass * self.gravity * (self.length / 2.0) * np.cos(theta)


class DeceptivePointMass(Environment):
    """2-d point mass with a small reward bump near the start and a large one far away.

    state = [px, py, vx, vy], action = force in [-1, 1]^2.

        v' = v + dt * (force_scale * a - drag * v)
        p' = p + dt * v'

    reward = distractor * exp(-|p - p_d|^2 / (2 w_d^2))
           + treasure / (1 + exp(-(treasure_radius - |p - p_t|) / treasure_edge))
           - ctrl_cost * |a|^2

    The distractor is a Gaussian bump inside the region warmup data covers,
    so a planner that only exploits a reward model fit near the start parks
    on it.  The treasure is a flat disc with a steep (but smooth) sigmoid
    edge: outside the disc the true reward is essentially zero, so nothing
    pulls an exploiting planner toward it, while any agent that roams into
    the disc sees an unmistakable payout.  The arena is a square of
    half-width `arena_half_width`; positions clamp at the walls (velocity
    zeroed on the blocked axis), keeping the explorable area finite.  Reset
    is exactly the origin at rest.
    """

    name = "deceptive_point_mass"
    state_dim = 4
    action_dim = 2

    def __init__(self, horizon=200, dt=0.1, force_scale=1.0, drag=0.25,
                 distractor_pos=(0.75, 0.0), distractor_reward=1.2, distractor_width=0.5,
                 treasure_pos=(-1.1, -1.1), treasure_reward=12.0, treasure_radius=0.6,
                 treasure_edge=0.1, ctrl_cost=0.1, arena_half_width=2.5,
                 noise_std=0.0, noise_seed=0):
        super().__init__(horizon=horizon, noise_std=noise_std, noise_seed=noise_seed)
        self.dt = float(dt)
        self.force_scale = float(force_scale)
        self.drag = float(drag)
        self.distractor_pos = np.asarray(distractor_pos, dtype=np.float64)
        self.distractor_reward = float(distractor_reward)
        self.distractor_width = float(distractor_width)
        self.treasure_pos = np.asarray(treasure_pos, dtype=np.float64)
        self.treasure_reward = float(treasure_reward)
        self.treasure_radius = float(treasure_radius)
        self.treasure_edge = float(treasure_edge)
        self.ctrl_cost = float(ctrl_cost)
        self.arena_half_width = float(arena_half_width)
        self.action_low = np.array([-1.0, -1.0])
        self.action_high = np.array([1.0, 1.0])

    @property
    def r_max(self) -> float:
        """Least upper bound on |reward|: both bonuses at peak, or pure control cost."""
        return max(self.distractor_reward + self.treasure_reward,
                   self.ctrl_cost * 2.0)

    def _initial_state(self, rng: RngStream):
        return np.zeros(4)

    def transition(self, state, action):
        pos, vel = state[:2], state[2:]
        vel_new = vel + self.dt * (self.force_scale * action - self.drag * vel)
        pos_new = pos + self.dt * vel_new
        w = self.arena_half_width
        at_wall = np.abs(pos_new) > w
        if np.any(at_wall):
            pos_new = np.clip(pos_new, -w, w)
            vel_new = np.where(at_wall, 0.0, vel_new)
        return np.concatenate([pos_new, vel_new])

    def reward_fn(self, state, action):
        pos = state[:2]
        d2 = float(np.sum((pos - self.distractor_pos) ** 2))
        t_dist = float(np.sqrt(np.sum((pos - self.treasure_pos) ** 2)))
        gate = 1.0 / (1.0 + np.exp(-(self.treasure_radius - t_dist) / self.treasure_edge))
        return (self.distractor_reward * np.exp(-d2 / (2.0 * self.distractor_width ** 2))
                + self.treasure_reward * gate
                - self.ctrl_cost * float(np.sum(action ** 2)))


class ContinuousCartPole(Environment):
    """Cart-pole swing-up with continuous force; pole starts hanging down.

    state = [x, v, theta, omega], theta from upright, action = force in
    [-max_force, max_force].  Standard pole-on-cart equations of motion,
    semi-implicit Euler at dt; the cart is clamped to |x| <= x_max with
    velocity zeroed at the walls.

    reward = cos(theta) - 0.05 x^2 - 0.001 a^2.  Constants: cart mass 1,
    pole mass 0.1, half-length 0.5, g = 9.8, dt = 0.02, max_force = 10,
    x_max = 3.  Reset: theta = pi + U(-0.1, 0.1), others U(-0.05, 0.05).
    """

    name = "continuous_cartpole"
    state_dim = 4
    action_dim = 1

    def __init__(self, horizon=200, dt=0.02, cart_mass=1.0, pole_mass=0.1,
                 half_length=0.5, gravity=9.8, max_force=10.0, x_max=3.0,
                 noise_std=0.0, noise_seed=0):
        super().__init__(horizon=horizon, noise_std=noise_std, noise_seed=noise_seed)
        self.dt = float(dt)
        self.cart_mass = float(cart_mass)
        self.pole_mass = float(pole_mass)
        self.half_length = float(half_length)
        self.gravity = float(gravity)
        self.max_force = float(max_force)
        self.x_max = float(x_max)
        self.action_low = np.array([-self.max_force])
        self.action_high = np.array([self.max_force])

    @property
    def r_max(self) -> float:
        """Exact max |reward| over |x| <= x_max, |a| <= max_force."""
        return 1.0 + 0.05 * self.x_max ** 2 + 0.001 * self.max_force ** 2

    def _initial_state(self, rng: RngStream):
        g = rng.gen
        return np.array([
            g.uniform(-0.05, 0.05),
            g.uniform(-0.05, 0.05),
            _wrap_angle(np.pi + g.uniform(-0.1, 0.1)),
            g.uniform(-0.05, 0.05),
        ])

    def transition(self, state, action):
        x, v, theta, omega = state
        force = float(action[0])
        total_mass = self.cart_mass + self.pole_mass
        ml = self.pole_mass * self.half_length
        sin_t, cos_t = np.sin(theta), np.cos(theta)
        temp = (force + ml * omega ** 2 * sin_t) / total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.half_length * (4.0 / 3.0 - self.pole_mass * cos_t ** 2 / total_mass))
        x_acc = temp - ml * theta_acc * cos_t / total_mass
        v_new = v + self.dt * x_acc
        x_new = x + self.dt * v_new
        omega_new = omega + self.dt * theta_acc
        theta_new = _wrap_angle(theta + self.dt * omega_new)
        if abs(x_new) > self.x_max:          # wall: clamp and stop the cart
            x_new = np.clip(x_new, -self.x_max, self.x_max)
            v_new = 0.0
        return np.array([x_new, v_new, theta_new, omega_new])

    def reward_fn(self, state, action):
        x, _, theta, _ = state
        return np.cos(theta) - 0.05 * x ** 2 - 0.001 * float(action[0]) ** 2


ENV_REGISTRY = {
    PendulumSwingUp.name: PendulumSwingUp,
    DeceptivePointMass.name: DeceptivePointMass,
    ContinuousCartPole.name: ContinuousCartPole,
}


def make_env(name: str, overrides: dict | None = None) -> Environment:
    """Build an environment by registry name; `overrides` map to constructor kwargs."""
    if name not in ENV_REGISTRY:
        raise ValueError(f"unknown environment '{name}'; "
                         f"known: {sorted(ENV_REGISTRY)}")
    overrides = dict(overrides or {})
    cls = ENV_REGISTRY[name]
    try:
        return cls(**overrides)
    except TypeError as exc:
        raise ValueError(f"bad override for environment '{name}': {exc}") from exc
