"""Reward poisoning for corrupted agents.

The attacker sees only its own trajectories, its own models, the budget and
the broadcast global model; nothing in this module takes another agent's
state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs import ActionSpec, action_spec
from .errors import ConfigError, InputError
from .learners import (
    AgentState,
    Learner,
    Trajectory,
    actor_update,
    critic_update,
    local_objective,
    rollout,
)

MODES = ("none", "untargeted", "random", "targeted")
CRITIC_MODES = ("dual", "single")


@dataclass(frozen=True)
class AttackConfig:
    """``epsilon`` is the l2 budget spent per poisoned local episode."""

    mode: str = "none"
    epsilon: float = 1.0
    target: int | tuple[float, ...] | None = None
    critic_mode: str = "dual"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"attack mode must be one of {MODES}, got {self.mode!r}")
        if self.critic_mode not in CRITIC_MODES:
            raise ConfigError(f"critic_mode must be one of {CRITIC_MODES}, got {self.critic_mode!r}")
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.mode == "targeted" and self.target is None:
            raise ConfigError("targeted attack requires a target")


def _unit_step(rewards: np.ndarray, direction: np.ndarray, epsilon: float, sign: float):
    norm = float(np.linalg.norm(direction))
    if epsilon == 0 or norm == 0:
        return rewards.copy()
    return rewards + sign * epsilon * (direction / norm)


def poison_rewards_untargeted(rewards, grad_rewards, epsilon: float) -> np.ndarray:
    """Step the rewards against the objective's reward gradient, spending exactly epsilon."""
    rewards = np.asarray(rewards, dtype=float)
    grad_rewards = np.asarray(grad_rewards, dtype=float)
    if rewards.shape != grad_rewards.shape:
        raise InputError("rewards and reward gradient differ in length")
    if epsilon < 0:
        raise InputError("epsilon must be >= 0")
    return _unit_step(rewards, grad_rewards, epsilon, -1.0)


def poison_rewards_random(rewards, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Baseline: subtract ``epsilon * x_t`` with ``x_t ~ U[0, 1)`` drawn per step."""
    rewards = np.asarray(rewards, dtype=float)
    if epsilon < 0:
        raise InputError("epsilon must be >= 0")
    return rewards - epsilon * rng.random(rewards.size)


def agreement_scores(actions, target, spec: ActionSpec) -> np.ndarray:
    """+1/-1 match indicator (discrete) or ``1 - 2 d / diam`` in [-1, 1] (continuous)."""
    if target is None:
        raise ConfigError("targeted poisoning needs a target action")
    if spec.discrete:
        return np.where(np.asarray(actions).reshape(-1) == int(target), 1.0, -1.0)
    a = spec.clip(np.asarray(actions, dtype=float).reshape(-1, spec.dim))
    dist = np.linalg.norm(a - np.asarray(target, dtype=float), axis=1)
    return np.clip(1.0 - 2.0 * dist / spec.diameter, -1.0, 1.0)


def poison_rewards_targeted(traj: Trajectory, target, epsilon: float,
                            spec: ActionSpec) -> np.ndarray:
    """Reward agreement with the target action, normalised to spend epsilon."""
    return _unit_step(traj.rewards, agreement_scores(traj.actions, target, spec), epsilon, 1.0)


def attack_cost(clean, poisoned) -> float:
    clean, poisoned = np.asarray(clean, dtype=float), np.asarray(poisoned, dtype=float)
    if clean.shape != poisoned.shape:
        raise InputError("clean and poisoned rewards differ in length")
    return float(np.linalg.norm(poisoned - clean))


def poison(traj: Trajectory, grad_rewards, cfg: AttackConfig, spec: ActionSpec,
           rng: np.random.Generator) -> np.ndarray:
    if cfg.mode == "untargeted":
        return poison_rewards_untargeted(traj.rewards, grad_rewards, cfg.epsilon)
    if cfg.mode == "random":
        return poison_rewards_random(traj.rewards, cfg.epsilon, rng)
    if cfg.mode == "targeted":
        return poison_rewards_targeted(traj, cfg.target, cfg.epsilon, spec)
    return traj.rewards.copy()


def malicious_local_episode_policy_gradient(agent, env_id, seed, cfg, learner, gamma, lr,
                                            max_steps, rng):
    """Corrupted VPG step: J from clean rewards picks the poison, the actor ascends J-hat."""
    traj = rollout(agent.actor, env_id, seed, max_steps)
    obj = local_objective(learner, agent.actor, None, traj, gamma)
    poisoned = traj.with_rewards(poison(traj, obj.grad_rewards, cfg, action_spec(env_id), rng))
    obj_hat = local_objective(learner, agent.actor, None, poisoned, gamma)
    new = replace(agent, actor=actor_update(agent.actor, obj_hat, lr),
                  episodes_run=agent.episodes_run + 1)
    return new, attack_cost(traj.rewards, poisoned.rewards)


def malicious_local_episode_actor_critic(agent, env_id, seed, cfg, learner, gamma, lr,
                                         max_steps, rng):
    """Corrupted actor-critic step.

    Dual mode: the private critic (``agent.critic``, clean rewards) scores the
    clean trajectory and fixes the poison; the public critic scores the
    poisoned one and is refit on it. Single mode: the public critic does both
    jobs and there is no private critic.
    """
    traj = rollout(agent.actor, env_id, seed, max_steps)
    dual = cfg.critic_mode == "dual"
    deciding = agent.critic if dual else agent.public_critic
    obj = local_objective(learner, agent.actor, deciding, traj, gamma)
    poisoned = traj.with_rewards(poison(traj, obj.grad_rewards, cfg, action_spec(env_id), rng))
    obj_hat = local_objective(learner, agent.actor, agent.public_critic, poisoned, gamma)
    new = replace(
        agent,
        actor=actor_update(agent.actor, obj_hat, lr),
        public_critic=critic_update(agent.public_critic, poisoned, gamma, lr),
        critic=critic_update(agent.critic, traj, gamma, lr) if dual else agent.critic,
        episodes_run=agent.episodes_run + 1,
    )
    return new, attack_cost(traj.rewards, poisoned.rewards)


def malicious_local_episode(agent: AgentState, env_id: str, seed: int, cfg: AttackConfig,
                            learner: Learner, gamma: float, lr: float, max_steps: int,
                            rng: np.random.Generator) -> tuple[AgentState, float]:
    """Run one poisoned local episode; returns the new state and the l2 cost spent."""
    if not agent.malicious:
        raise ConfigError(f"agent {agent.index} is not corrupted")
    if learner.uses_critic:
        return malicious_local_episode_actor_critic(agent, env_id, seed, cfg, learner, gamma,
                                                    lr, max_steps, rng)
    return malicious_local_episode_policy_gradient(agent, env_id, seed, cfg, learner, gamma,
                                                   lr, max_steps, rng)
