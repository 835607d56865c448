"""The federated round loop: broadcast, local training, aggregation, evaluation.

Every random draw is keyed by ``(master_seed, purpose, agent, round, episode)``
through :func:`derive_seed`, so the order in which agents are trained within a
round cannot change any result.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import envs, nets
from .attack import AttackConfig, malicious_local_episode
from .errors import ConfigError, InputError, ProtocolError
from .learners import AgentState, Learner, clean_local_episode
from .nets import ParamVector

# purpose tags for derive_seed
_INIT, _ROLLOUT, _ATTACK, _EVAL, _DEFENSE = range(5)

CSV_COLUMNS = ("round", "eval_mean_reward", "target_similarity", "attack_cost_total", "wall_ms")
DEFENSE_SHIFT = 1e-6


def derive_seed(master_seed: int, *keys: int) -> int:
    """A 63-bit seed that depends only on ``master_seed`` and ``keys``."""
    state = np.random.SeedSequence([int(master_seed) & (2**64 - 1), *map(int, keys)])
    return int(state.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class FederationConfig:
    env_id: str = "cartpole"
    n_agents: int = 4
    rounds: int = 200
    local_steps: int = 50
    malicious: tuple[int, ...] = ()
    learner: Learner = field(default_factory=Learner)
    attack: AttackConfig = field(default_factory=AttackConfig)
    aggregation: str = "fedavg"
    defense_test_episodes: int = 10
    eval_episodes: int = 100
    gamma: float = 0.99
    lr: float = 0.001
    master_seed: int = 0
    max_steps: int | None = None

    def __post_init__(self) -> None:
        envs.action_spec(self.env_id)
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1")
        if len(set(self.malicious)) != len(self.malicious) or not all(
            0 <= i < self.n_agents for i in self.malicious
        ):
            raise ConfigError("malicious indices must be distinct agent indices")
        if len(self.malicious) >= self.n_agents:
            raise ConfigError("at least one agent must be clean")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.aggregation not in ("fedavg", "defense"):
            raise ConfigError(f"aggregation must be 'fedavg' or 'defense', got {self.aggregation!r}")
        if self.defense_test_episodes < 1 or self.eval_episodes < 1:
            raise ConfigError("evaluation episode counts must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")

    @property
    def step_cap(self) -> int:
        cap = envs.max_episode_steps(self.env_id)
        return cap if self.max_steps is None else min(cap, self.max_steps)

    @property
    def attacked(self) -> bool:
        return bool(self.malicious) and self.attack.mode != "none"


def last_agents(n_agents: int, count: int) -> tuple[int, ...]:
    """Corrupt the highest-indexed agents, as in the single-attacker analysis."""
    return tuple(range(n_agents - count, n_agents))


@dataclass(frozen=True)
class ServerModels:
    actor: ParamVector
    critic: ParamVector | None = None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    eval_mean_reward: float
    eval_episodes: int
    attack_costs: tuple[float, ...]
    target_similarity: float | None = None
    wall_ms: float | None = None

    @property
    def attack_cost_total(self) -> float:
        return float(sum(self.attack_costs))


@dataclass
class FederationResult:
    records: list[RoundRecord]
    server: ServerModels
    agents: list[AgentState]


def initial_models(cfg: FederationConfig) -> ServerModels:
    rng = np.random.default_rng(derive_seed(cfg.master_seed, _INIT))
    obs_dim = envs.observation_dim(cfg.env_id)
    actor = nets.init_actor(obs_dim, envs.action_spec(cfg.env_id), rng)
    critic = nets.init_critic(obs_dim, rng) if cfg.learner.uses_critic else None
    return ServerModels(actor, critic)


def initial_agents(cfg: FederationConfig, server: ServerModels) -> list[AgentState]:
    corrupt = set(cfg.malicious) if cfg.attacked else set()
    return [
        AgentState(i, server.actor, server.critic, malicious=i in corrupt,
                   seed=derive_seed(cfg.master_seed, _ROLLOUT, i))
        for i in range(cfg.n_agents)
    ]


def broadcast_init(agent: AgentState, global_actor: ParamVector,
                   global_critic: ParamVector | None, critic_mode: str = "dual") -> AgentState:
    """Start-of-round initialisation from the broadcast models.

    Clean agents adopt both models. Attackers adopt the actor and reset the
    public critic to the broadcast one; the private critic carries over.
    """
    if not agent.actor.same_layout(global_actor):
        raise ProtocolError(f"agent {agent.index}: actor layout differs from the server's")
    mine = agent.critic
    if global_critic is not None and mine is not None and not mine.same_layout(global_critic):
        raise ProtocolError(f"agent {agent.index}: critic layout differs from the server's")
    if not agent.malicious or global_critic is None:
        return replace(agent, actor=global_actor, critic=global_critic)
    private = mine if critic_mode == "dual" else None
    return replace(agent, actor=global_actor, public_critic=global_critic, critic=private)


def fedavg(models: list[ParamVector]) -> ParamVector:
    if not models:
        raise ProtocolError("fedavg needs at least one model")
    layout = models[0].layout
    if any(m.layout != layout for m in models):
        raise ProtocolError("fedavg over models with different layouts")
    return ParamVector(np.mean([m.values for m in models], axis=0), layout)


def defense_credits(mean_rewards) -> np.ndarray:
    """Normalise test rewards into aggregation weights.

    Rewards are shifted to be positive only when some are not: ``r - min + 1e-6``.
    """
    r = np.asarray(mean_rewards, dtype=float)
    if r.min() <= 0:
        r = r - r.min() + DEFENSE_SHIFT
    return r / r.sum()


def weighted_average(models: list[ParamVector], weights) -> ParamVector:
    weights = np.asarray(weights, dtype=float)
    if np.all(weights == weights[0]):
        return fedavg(models)
    return ParamVector(weights @ np.array([m.values for m in models]), models[0].layout)


def evaluate_policy(actor: ParamVector, env_id: str, episodes: int, seed: int,
                    target=None, max_steps: int | None = None) -> tuple[np.ndarray, float | None]:
    """Per-episode undiscounted returns and, if ``target`` is given, the target similarity.

    Actions are sampled from the policy, not taken greedily.
    """
    if episodes < 1:
        raise InputError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    spec = envs.action_spec(env_id)
    batch = envs.VectorEnv(env_id, rng.integers(2**63, size=episodes))
    if max_steps is not None:
        batch.cap = min(batch.cap, max_steps)
    sampler = nets.PolicySampler(actor, spec)
    returns = np.zeros(episodes)
    hits, steps = 0.0, 0
    while batch.active.any():
        live = batch.active.copy()
        actions = sampler.sample_batch(batch.observations(), rng)
        if not spec.discrete:
            actions = spec.clip(actions)
        if target is not None:
            steps += int(live.sum())
            if spec.discrete:
                hits += float(np.sum(actions[live] == int(target)))
            else:
                d = np.linalg.norm(actions[live] - np.asarray(target, dtype=float), axis=1)
                hits += float(np.clip(1.0 - d / spec.diameter, 0.0, 1.0).sum())
        returns += batch.step(actions)
    return returns, (hits / steps if target is not None else None)


def evaluate(actor: ParamVector, env_id: str, episodes: int, seed: int,
             max_steps: int | None = None) -> float:
    """Mean undiscounted episode reward over ``episodes`` fresh episodes."""
    return float(evaluate_policy(actor, env_id, episodes, seed, max_steps=max_steps)[0].mean())


def target_similarity(actor: ParamVector, env_id: str, target, episodes: int, seed: int,
                      max_steps: int | None = None) -> float:
    if target is None:
        raise ConfigError("target_similarity needs a target action")
    return evaluate_policy(actor, env_id, episodes, seed, target, max_steps)[1]


def defense_aggregate(actors: list[ParamVector], critics: list[ParamVector] | None,
                      env_id: str, test_episodes: int, seeds,
                      max_steps: int | None = None):
    """Credit-weighted aggregation: weight each submission by its test reward."""
    if test_episodes < 1:
        raise InputError("test_episodes must be >= 1")
    scores = [evaluate(a, env_id, test_episodes, s, max_steps) for a, s in zip(actors, seeds)]
    credits = defense_credits(scores)
    actor = weighted_average(actors, credits)
    critic = weighted_average(critics, credits) if critics else None
    return actor, critic


def _local_training(agent: AgentState, p: int, server: ServerModels, cfg: FederationConfig):
    agent = broadcast_init(agent, server.actor, server.critic, cfg.attack.critic_mode)
    cost = 0.0
    for q in range(1, cfg.local_steps + 1):
        seed = derive_seed(cfg.master_seed, _ROLLOUT, agent.index, p, q)
        if agent.malicious:
            rng = np.random.default_rng(derive_seed(cfg.master_seed, _ATTACK, agent.index, p, q))
            agent, spent = malicious_local_episode(agent, cfg.env_id, seed, cfg.attack,
                                                   cfg.learner, cfg.gamma, cfg.lr,
                                                   cfg.step_cap, rng)
            cost += spent
        else:
            agent = clean_local_episode(agent, cfg.env_id, seed, cfg.learner, cfg.gamma,
                                        cfg.lr, cfg.step_cap)
    return agent, cost


def aggregate(p: int, agents: list[AgentState], cfg: FederationConfig) -> ServerModels:
    actors = [a.actor for a in agents]
    critics = [a.submitted_critic() for a in agents] if cfg.learner.uses_critic else None
    if cfg.aggregation == "defense":
        seeds = [derive_seed(cfg.master_seed, _DEFENSE, a.index, p) for a in agents]
        return ServerModels(*defense_aggregate(actors, critics, cfg.env_id,
                                               cfg.defense_test_episodes, seeds, cfg.step_cap))
    return ServerModels(fedavg(actors), fedavg(critics) if critics else None)


def evaluate_round(p: int, server: ServerModels, cfg: FederationConfig):
    returns, sim = evaluate_policy(server.actor, cfg.env_id, cfg.eval_episodes,
                                   derive_seed(cfg.master_seed, _EVAL, p), cfg.attack.target,
                                   cfg.step_cap)
    return float(returns.mean()), sim


def run_round(p: int, agents: list[AgentState], server: ServerModels, cfg: FederationConfig,
              workers: int = 1) -> tuple[ServerModels, list[AgentState], RoundRecord]:
    """One communication round ``p`` (1-based)."""
    if not 1 <= p <= cfg.rounds:
        raise ProtocolError(f"round {p} outside [1, {cfg.rounds}]")
    start = time.perf_counter()

    def train(agent):
        return _local_training(agent, p, server, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(train, agents))
    else:
        results = [train(a) for a in agents]
    agents = [a for a, _ in results]
    server = aggregate(p, agents, cfg)
    reward, sim = evaluate_round(p, server, cfg)
    record = RoundRecord(p, reward, cfg.eval_episodes, tuple(c for _, c in results), sim,
                         (time.perf_counter() - start) * 1000.0)
    return server, agents, record


def run_federation(cfg: FederationConfig, checkpoint_dir: str | Path | None = None,
                   checkpoint_every: int = 0, workers: int = 1) -> FederationResult:
    """All rounds, with a round-0 record evaluating the initial global model."""
    server = initial_models(cfg)
    agents = initial_agents(cfg, server)
    reward, sim = evaluate_round(0, server, cfg)
    records = [RoundRecord(0, reward, cfg.eval_episodes, (0.0,) * cfg.n_agents, sim, 0.0)]
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    for p in range(1, cfg.rounds + 1):
        server, agents, record = run_round(p, agents, server, cfg, workers)
        records.append(record)
        if checkpoint_dir is not None and checkpoint_every and p % checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir), p, server)
    return FederationResult(records, server, agents)


def save_checkpoint(directory: Path, p: int, server: ServerModels) -> None:
    nets.save_params(directory / f"actor_round{p:04d}.params", server.actor)
    if server.critic is not None:
        nets.save_params(directory / f"critic_round{p:04d}.params", server.critic)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_records_csv(path: str | Path, records: list[RoundRecord], timing: bool = False) -> None:
    """Per-round CSV. ``wall_ms`` is left empty unless ``timing`` so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.round, _fmt(r.eval_mean_reward), _fmt(r.target_similarity),
                             _fmt(r.attack_cost_total), _fmt(r.wall_ms) if timing else ""])


def read_records_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in rows]
