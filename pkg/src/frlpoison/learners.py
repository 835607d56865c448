"""Local RL: rollouts, the VPG and PPO objectives, and actor / critic updates.

Both objectives return their gradient with respect to the observed reward
sequence alongside the parameter gradient; the attacker consumes the former.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import envs, nets
from .errors import ConfigError, InputError
from .nets import ParamVector


@dataclass(frozen=True)
class Trajectory:
    """One rollout. ``actions`` are the raw policy samples (unclipped)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.rewards)
        if n < 1 or len(self.states) != n or len(self.actions) != n:
            raise InputError("trajectory needs equal, non-zero numbers of states, actions, rewards")

    @property
    def length(self) -> int:
        return len(self.rewards)

    def with_rewards(self, rewards) -> "Trajectory":
        rewards = np.asarray(rewards, dtype=float)
        if rewards.shape != self.rewards.shape:
            raise InputError("replacement rewards must match the trajectory length")
        return replace(self, rewards=rewards)


@dataclass(frozen=True)
class Objective:
    value: float
    grad_theta: np.ndarray
    grad_rewards: np.ndarray


@dataclass(frozen=True)
class Learner:
    """``vpg`` or ``ppo``; ``clip`` is PPO's ratio clipping half-width."""

    kind: str = "vpg"
    clip: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in ("vpg", "ppo"):
            raise ConfigError(f"learner must be 'vpg' or 'ppo', got {self.kind!r}")
        if self.kind == "ppo" and not 0.0 < self.clip < 1.0:
            raise ConfigError(f"ppo clip must lie in (0, 1), got {self.clip}")

    @property
    def uses_critic(self) -> bool:
        return self.kind == "ppo"


@dataclass
class AgentState:
    """Per-agent models.

    ``critic`` is the agent's own critic: for an attacker it is the private
    critic trained on clean rewards. ``public_critic`` is only used by
    attackers; it is trained on poisoned rewards and submitted to the server.
    """

    index: int
    actor: ParamVector
    critic: ParamVector | None = None
    public_critic: ParamVector | None = None
    malicious: bool = False
    seed: int = 0
    episodes_run: int = field(default=0, compare=False)

    def submitted_critic(self) -> ParamVector | None:
        return self.public_critic if self.malicious and self.public_critic is not None else self.critic


def rollout(actor: ParamVector, env_id: str, seed: int, max_steps: int) -> Trajectory:
    """Sample one episode. The environment's initial state and the action noise
    both come from ``seed``."""
    if max_steps < 1:
        raise InputError("max_steps must be >= 1")
    rng = np.random.default_rng(seed)
    spec = envs.action_spec(env_id)
    sampler = nets.PolicySampler(actor, spec)
    state = envs.reset(env_id, int(rng.integers(2**63)))
    states, actions, rewards = [], [], []
    for _ in range(max_steps):
        action = sampler.sample(state.observation, rng)
        applied = action if spec.discrete else spec.clip(action)
        states.append(state.observation)
        actions.append(action)
        state, reward, done = envs.step(state, applied)
        rewards.append(reward)
        if done:
            break
    return Trajectory(np.array(states), np.array(actions), np.array(rewards, dtype=float))


def returns_to_go(rewards, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise InputError("returns_to_go needs at least one reward")
    if not 0.0 <= gamma <= 1.0:
        raise InputError(f"gamma must lie in [0, 1], got {gamma}")
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def discounted_prefix(values, gamma: float) -> np.ndarray:
    """``c_k = sum_{t<=k} gamma^(k-t) values[t]``."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    acc = 0.0
    for k in range(values.size):
        acc = values[k] + gamma * acc
        out[k] = acc
    return out


def vpg_objective(actor: ParamVector, traj: Trajectory, gamma: float) -> Objective:
    """REINFORCE surrogate ``mean_t log pi(a_t|s_t) * G_t``.

    Reward ``r_k`` enters every ``G_t`` with ``t <= k`` with weight
    ``gamma^(k-t)``, which gives the closed-form reward gradient.
    """
    T = traj.length
    G = returns_to_go(traj.rewards, gamma)
    lp, grad = nets.score(actor, traj.states, traj.actions, G / T)
    return Objective(float(lp @ G) / T, grad, discounted_prefix(lp, gamma) / T)


def td_advantages(critic: ParamVector, traj: Trajectory, gamma: float) -> np.ndarray:
    """One-step advantages ``r_t + gamma V(s_{t+1}) - V(s_t)``, zero bootstrap at the end."""
    v = nets.critic_values(critic, traj.states)
    v_next = np.append(v[1:], 0.0)
    return traj.rewards + gamma * v_next - v


def ppo_objective(actor: ParamVector, actor_old: ParamVector, critic: ParamVector,
                  traj: Trajectory, gamma: float, clip: float) -> Objective:
    """Clipped surrogate ``mean_t min(rho_t A_t, clip(rho_t) A_t)``.

    Advantages are constants for the parameter gradient. Where the two branches
    tie the unclipped one is taken.
    """
    if not actor.same_layout(actor_old):
        raise InputError("actor and actor_old must share a layout")
    T = traj.length
    adv = td_advantages(critic, traj, gamma)
    lp_old = nets.log_probs(actor_old, traj.states, traj.actions)
    lp = nets.log_probs(actor, traj.states, traj.actions)
    ratio = np.exp(lp - lp_old)
    clipped_ratio = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped, clipped = ratio * adv, clipped_ratio * adv
    use_unclipped = unclipped <= clipped
    value = float(np.where(use_unclipped, unclipped, clipped).mean())
    # d rho / d theta = rho * grad log pi; the clipped branch is flat in theta
    weights = np.where(use_unclipped, ratio * adv, 0.0) / T
    _, grad = nets.score(actor, traj.states, traj.actions, weights)
    grad_rewards = np.where(use_unclipped, ratio, clipped_ratio) / T
    return Objective(value, grad, grad_rewards)


def td_loss(critic: ParamVector, traj: Trajectory, gamma: float,
            target_critic: ParamVector | None = None) -> float:
    """Mean squared TD error; targets use ``target_critic`` (default: ``critic``)."""
    target_critic = critic if target_critic is None else target_critic
    v_target = nets.critic_values(target_critic, traj.states)
    target = traj.rewards + gamma * np.append(v_target[1:], 0.0)
    return float(np.mean((nets.critic_values(critic, traj.states) - target) ** 2))


def critic_update(critic: ParamVector, traj: Trajectory, gamma: float, lr: float) -> ParamVector:
    """One semi-gradient descent step on the mean squared TD error."""
    v = nets.critic_values(critic, traj.states)
    target = traj.rewards + gamma * np.append(v[1:], 0.0)
    grad = nets.critic_backward(critic, traj.states, 2.0 * (v - target) / traj.length)
    return critic.with_values(critic.values - lr * grad)


def actor_update(actor: ParamVector, objective: Objective, lr: float) -> ParamVector:
    """Single gradient-ascent step."""
    if objective.grad_theta.shape != actor.values.shape:
        raise InputError("objective gradient does not match the actor layout")
    return actor.with_values(actor.values + lr * objective.grad_theta)


def local_objective(learner: Learner, actor: ParamVector, critic: ParamVector | None,
                    traj: Trajectory, gamma: float) -> Objective:
    """The learner's objective at the rollout policy (so PPO's old policy is ``actor``)."""
    if learner.kind == "vpg":
        return vpg_objective(actor, traj, gamma)
    return ppo_objective(actor, actor, critic, traj, gamma, learner.clip)


def clean_local_episode(agent: AgentState, env_id: str, seed: int, learner: Learner,
                        gamma: float, lr: float, max_steps: int) -> AgentState:
    """One honest local step: roll out, compute J, ascend, refit the critic."""
    traj = rollout(agent.actor, env_id, seed, max_steps)
    obj = local_objective(learner, agent.actor, agent.critic, traj, gamma)
    actor = actor_update(agent.actor, obj, lr)
    critic = agent.critic
    if learner.uses_critic:
        critic = critic_update(agent.critic, traj, gamma, lr)
    return replace(agent, actor=actor, critic=critic, episodes_run=agent.episodes_run + 1)
