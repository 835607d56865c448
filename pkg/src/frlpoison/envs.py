"""Seedable episodic environments: CartPole, a torque-driven pendulum, a gridworld
and a one-step analytic bandit.

Environments are pure functions over immutable :class:`EnvState` values. The
only randomness is the initial-state draw in :func:`reset`, which consumes a
generator built from the caller's seed and nothing else.

:class:`VectorEnv` steps a batch of independent episodes with numpy; it exists
so that evaluating a central policy over many episodes stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, ProtocolError

ENV_IDS = ("cartpole", "pendulum", "gridworld", "analytic")
DEFAULT_STEP_CAP = 300

# CartPole constants (classic control definition).
GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4

# Pendulum constants; angle 0 is upright.
PEND_G = 10.0
PEND_MASS = 1.0
PEND_LENGTH = 1.0
PEND_DT = 0.05
PEND_MAX_SPEED = 8.0
PEND_MAX_TORQUE = 3.0

GRID_SIZE = 5
GRID_GOAL = (GRID_SIZE - 1, GRID_SIZE - 1)
GRID_STEP_REWARD = -0.01
GRID_GOAL_REWARD = 1.0
GRID_STEP_CAP = 100
# up, right, down, left as (dx, dy)
GRID_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class ActionSpec:
    """Either ``discrete`` with ``n`` actions or ``continuous`` on a box."""

    kind: str
    n: int = 0
    low: tuple[float, ...] = ()
    high: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "discrete":
            if self.n < 2:
                raise ConfigError(f"discrete action space needs >= 2 actions, got {self.n}")
        elif self.kind == "continuous":
            if len(self.low) != len(self.high) or not self.low:
                raise ConfigError("continuous bounds must be non-empty and equal length")
            if any(lo >= hi for lo, hi in zip(self.low, self.high)):
                raise ConfigError("continuous bounds need low < high componentwise")
        else:
            raise ConfigError(f"unknown action kind {self.kind!r}")

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def dim(self) -> int:
        """Logit count for discrete spaces, box dimension for continuous ones."""
        return self.n if self.discrete else len(self.low)

    @property
    def diameter(self) -> float:
        """Largest distance between two actions in a continuous box."""
        return float(np.linalg.norm(np.subtract(self.high, self.low)))

    def contains(self, action) -> bool:
        if self.discrete:
            try:
                a = int(action)
            except (TypeError, ValueError):
                return False
            return a == action and 0 <= a < self.n
        a = np.asarray(action, dtype=float).reshape(-1)
        return (
            a.shape == (len(self.low),)
            and bool(np.all(a >= self.low))
            and bool(np.all(a <= self.high))
        )

    def clip(self, action) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=float), self.low, self.high)


@dataclass(frozen=True)
class EnvState:
    env_id: str
    observation: np.ndarray
    step_index: int = 0
    terminated: bool = False
    # Underlying physical state; the observation is a function of it.
    physical: tuple = field(default=(), repr=False)


_SPECS = {
    "cartpole": ActionSpec("discrete", n=2),
    "pendulum": ActionSpec("continuous", low=(-PEND_MAX_TORQUE,), high=(PEND_MAX_TORQUE,)),
    "gridworld": ActionSpec("discrete", n=4),
    "analytic": ActionSpec("discrete", n=2),
}

_OBS_DIMS = {"cartpole": 4, "pendulum": 3, "gridworld": 2, "analytic": 1}

_PEND_WORST = -(math.pi**2 + 0.1 * PEND_MAX_SPEED**2 + 0.001 * PEND_MAX_TORQUE**2)
_REWARD_RANGES = {
    "cartpole": (1.0, 1.0),
    "pendulum": (_PEND_WORST, 0.0),
    "gridworld": (GRID_STEP_REWARD, GRID_GOAL_REWARD),
    "analytic": (0.0, 1.0),
}


def _check_id(env_id: str) -> None:
    if env_id not in ENV_IDS:
        raise ConfigError(f"unknown env_id {env_id!r}; expected one of {ENV_IDS}")


def action_spec(env_id: str) -> ActionSpec:
    _check_id(env_id)
    return _SPECS[env_id]


def observation_dim(env_id: str) -> int:
    _check_id(env_id)
    return _OBS_DIMS[env_id]


def reward_range(env_id: str) -> tuple[float, float]:
    _check_id(env_id)
    return _REWARD_RANGES[env_id]


def max_episode_steps(env_id: str) -> int:
    _check_id(env_id)
    if env_id == "gridworld":
        return GRID_STEP_CAP
    if env_id == "analytic":
        return 1
    return DEFAULT_STEP_CAP


def _angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


def _pendulum_obs(theta: float, theta_dot: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta), theta_dot])


def _grid_obs(x: int, y: int) -> np.ndarray:
    return np.array([x / (GRID_SIZE - 1), y / (GRID_SIZE - 1)])


def _initial_physical(env_id: str, rng: np.random.Generator) -> tuple:
    if env_id == "cartpole":
        return tuple(float(v) for v in rng.uniform(-0.05, 0.05, size=4))
    if env_id == "pendulum":
        theta, theta_dot = rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)
        return (float(theta), float(theta_dot))
    if env_id == "gridworld":
        return (0, 0)
    return (0,)


def _observe(env_id: str, physical: tuple) -> np.ndarray:
    if env_id == "cartpole":
        return np.array(physical, dtype=float)
    if env_id == "pendulum":
        return _pendulum_obs(*physical)
    if env_id == "gridworld":
        return _grid_obs(*physical)
    return np.ones(1)


def reset(env_id: str, seed: int) -> EnvState:
    """Initial state drawn with ``np.random.default_rng(seed)``."""
    _check_id(env_id)
    physical = _initial_physical(env_id, np.random.default_rng(seed))
    return EnvState(env_id, _observe(env_id, physical), 0, False, physical)


def cartpole_dynamics(x, x_dot, theta, theta_dot, force):
    """One explicit Euler step of the cart-pole equations of motion."""
    costheta, sintheta = math.cos(theta), math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sintheta) / TOTAL_MASS
    theta_acc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * costheta * costheta / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * costheta / TOTAL_MASS
    return (
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    )


def step(state: EnvState, action) -> tuple[EnvState, float, bool]:
    """Advance one step. Returns ``(next_state, reward, done)``."""
    if state.terminated:
        raise ProtocolError("step called on a terminated state; reset first")
    env_id = state.env_id
    spec = action_spec(env_id)
    if not spec.contains(action):
        raise InputError(f"action {action!r} outside the {env_id} action space")
    t = state.step_index + 1
    cap = max_episode_steps(env_id)

    if env_id == "cartpole":
        force = FORCE_MAG if int(action) == 1 else -FORCE_MAG
        physical = cartpole_dynamics(*state.physical, force)
        x, _, theta, _ = physical
        failed = x < -X_LIMIT or x > X_LIMIT or theta < -THETA_LIMIT or theta > THETA_LIMIT
        reward = 1.0
        done = failed or t >= cap
        obs = np.array(physical)
    elif env_id == "pendulum":
        u = float(np.asarray(action, dtype=float).reshape(-1)[0])
        theta, theta_dot = state.physical
        reward = -(_angle_normalize(theta) ** 2 + 0.1 * theta_dot**2 + 0.001 * u**2)
        theta_dot = theta_dot + (
            3 * PEND_G / (2 * PEND_LENGTH) * math.sin(theta)
            + 3.0 / (PEND_MASS * PEND_LENGTH**2) * u
        ) * PEND_DT
        theta_dot = min(max(theta_dot, -PEND_MAX_SPEED), PEND_MAX_SPEED)
        theta = theta + theta_dot * PEND_DT
        physical = (theta, theta_dot)
        done = t >= cap
        obs = _pendulum_obs(theta, theta_dot)
    elif env_id == "gridworld":
        dx, dy = GRID_MOVES[int(action)]
        x, y = state.physical
        x = min(max(x + dx, 0), GRID_SIZE - 1)
        y = min(max(y + dy, 0), GRID_SIZE - 1)
        physical = (x, y)
        at_goal = physical == GRID_GOAL
        reward = GRID_GOAL_REWARD if at_goal else GRID_STEP_REWARD
        done = at_goal or t >= cap
        obs = _grid_obs(x, y)
    else:
        physical = state.physical
        reward = 1.0 if int(action) == 0 else 0.0
        done = True
        obs = state.observation

    return EnvState(env_id, obs, t, done, physical), reward, done


class VectorEnv:
    """A batch of independent episodes of one environment.

    Episodes that finish stay frozen: their rewards are zero and ``active`` is
    false from the step after termination on.
    """

    def __init__(self, env_id: str, seeds) -> None:
        _check_id(env_id)
        self.env_id = env_id
        self.spec = action_spec(env_id)
        self.cap = max_episode_steps(env_id)
        rows = [_initial_physical(env_id, np.random.default_rng(s)) for s in seeds]
        self.physical = np.array(rows, dtype=float)
        self.size = len(rows)
        self.t = 0
        self.active = np.ones(self.size, dtype=bool)

    def observations(self) -> np.ndarray:
        p = self.physical
        if self.env_id == "cartpole":
            return p.copy()
        if self.env_id == "pendulum":
            return np.column_stack([np.cos(p[:, 0]), np.sin(p[:, 0]), p[:, 1]])
        if self.env_id == "gridworld":
            return p / (GRID_SIZE - 1)
        return np.ones((self.size, 1))

    def step(self, actions) -> np.ndarray:
        """Apply one action per episode; returns rewards (zero for finished ones)."""
        if not self.active.any():
            raise ProtocolError("all episodes in the batch have terminated")
        self.t += 1
        p = self.physical
        act = self.active
        if self.env_id == "cartpole":
            force = np.where(np.asarray(actions) == 1, FORCE_MAG, -FORCE_MAG)
            x, x_dot, th, th_dot = p.T
            cos, sin = np.cos(th), np.sin(th)
            temp = (force + POLE_MASS_LENGTH * th_dot * th_dot * sin) / TOTAL_MASS
            th_acc = (GRAVITY * sin - cos * temp) / (
                HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS)
            )
            x_acc = temp - POLE_MASS_LENGTH * th_acc * cos / TOTAL_MASS
            new = np.column_stack(
                [x + TAU * x_dot, x_dot + TAU * x_acc, th + TAU * th_dot, th_dot + TAU * th_acc]
            )
            rewards = np.ones(self.size)
            failed = (np.abs(new[:, 0]) > X_LIMIT) | (np.abs(new[:, 2]) > THETA_LIMIT)
        elif self.env_id == "pendulum":
            u = np.clip(np.asarray(actions, dtype=float).reshape(self.size), -PEND_MAX_TORQUE,
                        PEND_MAX_TORQUE)
            th, th_dot = p.T
            norm = ((th + np.pi) % (2 * np.pi)) - np.pi
            rewards = -(norm**2 + 0.1 * th_dot**2 + 0.001 * u**2)
            th_dot = np.clip(
                th_dot + (3 * PEND_G / (2 * PEND_LENGTH) * np.sin(th)
                          + 3.0 / (PEND_MASS * PEND_LENGTH**2) * u) * PEND_DT,
                -PEND_MAX_SPEED, PEND_MAX_SPEED,
            )
            new = np.column_stack([th + th_dot * PEND_DT, th_dot])
            failed = np.zeros(self.size, dtype=bool)
        elif self.env_id == "gridworld":
            moves = np.array(GRID_MOVES, dtype=float)[np.asarray(actions, dtype=int)]
            new = np.clip(p + moves, 0, GRID_SIZE - 1)
            failed = (new[:, 0] == GRID_GOAL[0]) & (new[:, 1] == GRID_GOAL[1])
            rewards = np.where(failed, GRID_GOAL_REWARD, GRID_STEP_REWARD)
        else:
            new = p
            rewards = np.where(np.asarray(actions) == 0, 1.0, 0.0)
            failed = np.ones(self.size, dtype=bool)
        self.physical = np.where(act[:, None], new, p)
        rewards = np.where(act, rewards, 0.0)
        done = failed | (self.t >= self.cap)
        self.active = act & ~done
        return rewards
