from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from errors import ConfigError, DimensionError, ensure_finite

DEFAULT_DT = 0.05


class EnvSpec(ABC):
    """Deterministic MDP ``(S, A, f, r, rho0, T)``.

    Subclasses are frozen dataclasses whose fields are the physical constants;
    every method works on a single state ``(n,)`` or a batch ``(B, n)``.
    """

    name: str = ""
    state_dim: int = 0
    action_dim: int = 0
    horizon: int = 0

    @property
    @abstractmethod
    def action_low(self) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def action_high(self) -> np.ndarray:
        ...

    def clip_action(self, a) -> np.ndarray:
        return np.clip(np.asarray(a, dtype=np.float64), self.action_low, self.action_high)

    @abstractmethod
    def transition(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def reward(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def reward_grad(self, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(dr/ds, dr/da)`` with the shapes of ``s`` and ``a``."""

    @abstractmethod
    def sample_initial(self, n: int, rng: np.random.Generator) -> np.ndarray:
        ...


def _check_state_action(spec: EnvSpec, s, a) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape[-1] != spec.state_dim:
        raise DimensionError(f"{spec.name}: state has {s.shape[-1]} entries, expected {spec.state_dim}")
    if a.shape[-1] != spec.action_dim:
        raise DimensionError(f"{spec.name}: action has {a.shape[-1]} entries, expected {spec.action_dim}")
    return s, a


def velocity_reward(velocity, a, action_cost: float = 0.005) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.asarray(velocity, dtype=np.float64) - action_cost * np.sum(a * a, axis=-1)


@dataclass(frozen=True)
class Pendulum(EnvSpec):
    """Torque-limited pendulum, angle measured from upright, state (cos, sin, angular velocity)."""

    gravity: float = 10.0
    length: float = 1.0
    mass: float = 1.0
    dt: float = DEFAULT_DT
    max_torque: float = 2.0
    max_speed: float = 8.0
    horizon: int = 200
    speed_cost: float = 0.1
    action_cost: float = 0.001
    initial_angle_noise: float = 0.1
    initial_speed_noise: float = 0.1

    name = "pendulum"
    state_dim = 3
    action_dim = 1

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-self.max_torque])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([self.max_torque])

    def angle(self, s: np.ndarray) -> np.ndarray:
        return np.arctan2(s[..., 1], s[..., 0])

    def energy(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        kinetic = 0.5 * self.mass * self.length ** 2 * s[..., 2] ** 2
        potential = self.mass * self.gravity * self.length * np.cos(self.angle(s))
        return kinetic + potential

    def transition(self, s, a):
        radius = np.hypot(s[..., 0], s[..., 1])
        radius = np.where(radius > 0, radius, 1.0)
        cos_theta, sin_theta = s[..., 0] / radius, s[..., 1] / radius
        acceleration = (self.gravity / self.length) * sin_theta + a[..., 0] / (self.mass * self.length ** 2)
        speed = np.clip(s[..., 2] + self.dt * acceleration, -self.max_speed, self.max_speed)
        # rotate the (cos, sin) pair by dt * speed; a resting state maps onto itself exactly
        turn = self.dt * speed
        cos_turn, sin_turn = np.cos(turn), np.sin(turn)
        return np.stack(
            [cos_theta * cos_turn - sin_theta * sin_turn, sin_theta * cos_turn + cos_theta * sin_turn, speed],
            axis=-1,
        )

    def reward(self, s, a):
        # quadratic in the trig features: |(cos, sin) - (1, 0)|^2 == 2 - 2 cos
        angle_cost = (s[..., 0] - 1.0) ** 2 + s[..., 1] ** 2
        return -(angle_cost + self.speed_cost * s[..., 2] ** 2 + self.action_cost * np.sum(a * a, axis=-1))

    def reward_grad(self, s, a):
        ds = np.stack(
            [-2.0 * (s[..., 0] - 1.0), -2.0 * s[..., 1], -2.0 * self.speed_cost * s[..., 2]],
            axis=-1,
        )
        da = -2.0 * self.action_cost * a
        return ds, da

    def sample_initial(self, n, rng):
        theta = np.pi + rng.uniform(-self.initial_angle_noise, self.initial_angle_noise, size=n)
        speed = rng.uniform(-self.initial_speed_noise, self.initial_speed_noise, size=n)
        return np.stack([np.cos(theta), np.sin(theta), speed], axis=-1)


@dataclass(frozen=True)
class CartpoleSwingup(EnvSpec):
    """Cart-pole swing-up; state (x, x_dot, cos, sin, angular velocity), angle 0 upright."""

    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_scale: float = 10.0
    dt: float = DEFAULT_DT
    horizon: int = 200
    position_cost: float = 0.01
    action_cost: float = 0.005
    initial_noise: float = 0.05

    name = "cartpole_swingup"
    state_dim = 5
    action_dim = 1

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-1.0])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([1.0])

    def transition(self, s, a):
        x, x_dot, theta_dot = s[..., 0], s[..., 1], s[..., 4]
        theta = np.arctan2(s[..., 3], s[..., 2])
        sin_t, cos_t = np.sin(theta), np.cos(theta)
        total_mass = self.cart_mass + self.pole_mass
        force = self.force_scale * a[..., 0]

        temp = (force + self.pole_mass * self.pole_half_length * theta_dot ** 2 * sin_t) / total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.pole_half_length * (4.0 / 3.0 - self.pole_mass * cos_t ** 2 / total_mass)
        )
        x_acc = temp - self.pole_mass * self.pole_half_length * theta_acc * cos_t / total_mass

        x_dot = x_dot + self.dt * x_acc
        x = x + self.dt * x_dot
        theta_dot = theta_dot + self.dt * theta_acc
        theta = theta + self.dt * theta_dot
        return np.stack([x, x_dot, np.cos(theta), np.sin(theta), theta_dot], axis=-1)

    def reward(self, s, a):
        return s[..., 2] - self.position_cost * s[..., 0] ** 2 - self.action_cost * np.sum(a * a, axis=-1)

    def reward_grad(self, s, a):
        ds = np.zeros_like(s)
        ds[..., 0] = -2.0 * self.position_cost * s[..., 0]
        ds[..., 2] = 1.0
        return ds, -2.0 * self.action_cost * a

    def sample_initial(self, n, rng):
        noise = rng.uniform(-self.initial_noise, self.initial_noise, size=(n, 4))
        theta = np.pi + noise[:, 2]
        return np.stack([noise[:, 0], noise[:, 1], np.cos(theta), np.sin(theta), noise[:, 3]], axis=-1)


@dataclass(frozen=True)
class PointMass(EnvSpec):
    """Damped 2-D point mass rewarded for velocity along a goal heading."""

    mass: float = 1.0
    damping: float = 0.5
    dt: float = DEFAULT_DT
    horizon: int = 100
    max_force: float = 1.0
    heading: tuple[float, float] = (1.0, 0.0)
    action_cost: float = 0.005
    initial_box: float = 0.1

    name = "pointmass"
    state_dim = 4
    action_dim = 2

    @property
    def action_low(self) -> np.ndarray:
        return np.full(2, -self.max_force)

    @property
    def action_high(self) -> np.ndarray:
        return np.full(2, self.max_force)

    @property
    def unit_heading(self) -> np.ndarray:
        heading = np.asarray(self.heading, dtype=np.float64)
        return heading / np.linalg.norm(heading)

    def transition(self, s, a):
        position, velocity = s[..., 0:2], s[..., 2:4]
        velocity = velocity + self.dt * (a / self.mass - self.damping * velocity)
        position = position + self.dt * velocity
        return np.concatenate([position, velocity], axis=-1)

    def reward(self, s, a):
        return velocity_reward(s[..., 2:4] @ self.unit_heading, a, self.action_cost)

    def reward_grad(self, s, a):
        ds = np.zeros_like(s)
        ds[..., 2:4] = self.unit_heading
        return ds, -2.0 * self.action_cost * a

    def sample_initial(self, n, rng):
        return rng.uniform(-self.initial_box, self.initial_box, size=(n, 4))


ENVIRONMENTS: dict[str, type[EnvSpec]] = {
    "pendulum": Pendulum,
    "cartpole_swingup": CartpoleSwingup,
    "pointmass": PointMass,
}


def make_env(env_id: str, overrides: dict[str, object] | None = None) -> EnvSpec:
    try:
        env_cls = ENVIRONMENTS[env_id]
    except KeyError as exc:
        known = ", ".join(sorted(ENVIRONMENTS))
        raise ConfigError(f"unknown environment '{env_id}' (known: {known})") from exc
    overrides = dict(overrides or {})
    names = {field.name for field in dataclasses.fields(env_cls)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise ConfigError(f"{env_id}: unknown physical constant(s): {', '.join(unknown)}")
    if "heading" in overrides:
        overrides["heading"] = tuple(float(value) for value in overrides["heading"])
    return env_cls(**overrides)


def env_step(spec: EnvSpec, s, a) -> np.ndarray:
    s, a = _check_state_action(spec, s, a)
    s_next = spec.transition(s, spec.clip_action(a))
    ensure_finite(s_next, f"{spec.name} step")
    return s_next


def env_reward(spec: EnvSpec, s, a):
    s, a = _check_state_action(spec, s, a)
    reward = spec.reward(s, a)
    return float(reward) if np.ndim(reward) == 0 else reward


def sample_initial_states(spec: EnvSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        return np.zeros((0, spec.state_dim))
    return spec.sample_initial(int(n), rng)


ActionFn = Callable[[np.ndarray, int], np.ndarray]


def run_episode(spec: EnvSpec, act: ActionFn, s0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll ``horizon`` steps through the true dynamics.

    Returns states ``(T + 1, n)``, the raw actions ``(T, m)`` returned by
    ``act`` and rewards ``(T,)`` computed on the clipped actions.
    """
    states = np.zeros((spec.horizon + 1, spec.state_dim))
    actions = np.zeros((spec.horizon, spec.action_dim))
    rewards = np.zeros(spec.horizon)
    states[0] = s0
    for t in range(spec.horizon):
        action = np.asarray(act(states[t], t), dtype=np.float64)
        actions[t] = action
        rewards[t] = spec.reward(states[t], spec.clip_action(action))
        states[t + 1] = env_step(spec, states[t], action)
    return states, actions, rewards


def mean_and_stderr(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0, 0.0
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def evaluate_real_return(
    spec: EnvSpec,
    policy,
    n_episodes: int,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> tuple[float, float]:
    """Mean and standard error of the undiscounted real return.

    Per episode the generator is consumed in a fixed order: the initial
    state, then one action draw per step (none in deterministic mode).
    """
    if n_episodes < 1:
        raise ConfigError("n_episodes must be at least 1")
    returns = []
    for _ in range(n_episodes):
        s0 = sample_initial_states(spec, 1, rng)[0]
        _, _, rewards = run_episode(spec, lambda s, t: policy.sample_action(s, rng, deterministic), s0)
        returns.append(rewards.sum())
    return mean_and_stderr(returns)


@dataclass(frozen=True)
class EnergyShapingController:
    """Reference swing-up controller for the pendulum: energy pumping plus a PD catch near upright."""

    env: Pendulum
    pump_gain: float = 1.0
    catch_cosine: float = 0.95
    kp: float = 20.0
    kd: float = 5.0

    def sample_action(self, s, rng=None, deterministic: bool = True) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        env = self.env
        theta = env.angle(s)
        speed = s[..., 2]
        if s[..., 0] > self.catch_cosine:
            torque = -(self.kp * theta + self.kd * speed)
        else:
            target = env.mass * env.gravity * env.length
            gap = target - env.energy(s)
            direction = np.sign(speed) if speed != 0 else 1.0
            torque = self.pump_gain * gap * direction
        return np.clip(np.array([torque], dtype=np.float64), env.action_low, env.action_high)


def reference_return(spec: EnvSpec, n_episodes: int, rng: np.random.Generator) -> tuple[float, float]:
    if not isinstance(spec, Pendulum):
        raise ConfigError(f"no reference controller for '{spec.name}'")
    return evaluate_real_return(spec, EnergyShapingController(spec), n_episodes, rng, deterministic=True)
