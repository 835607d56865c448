"""Experiment config files: ``[section]`` headers and ``key = value`` lines.

Missing keys fall back to the FRL defaults (gamma 0.99, lr 0.001, 50 local
steps, 200 rounds, epsilon 1, 100 evaluation episodes, 10 defense test
episodes). Every error names the offending key and its line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

from . import envs
from .attack import AttackConfig
from .errors import ConfigError
from .federation import FederationConfig, last_agents
from .learners import Learner

CONDITION_MODES = ("clean", "untargeted", "random", "targeted")
_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class Condition:
    """``<mode>[+single][+defense]``; ``clean`` means no attack."""

    label: str
    mode: str
    critic_mode: str = "dual"
    aggregation: str = "fedavg"

    @classmethod
    def parse(cls, text: str) -> "Condition":
        label = text.strip()
        mode, *flags = label.split("+")
        if mode not in CONDITION_MODES:
            raise ConfigError(f"condition {label!r}: mode must be one of {CONDITION_MODES}")
        unknown = set(flags) - {"single", "defense"}
        if unknown or len(set(flags)) != len(flags):
            raise ConfigError(f"condition {label!r}: flags must be 'single' and/or 'defense'")
        return cls(label, mode, "single" if "single" in flags else "dual",
                   "defense" if "defense" in flags else "fedavg")

    def apply(self, base: FederationConfig) -> FederationConfig:
        mode = "none" if self.mode == "clean" else self.mode
        attack = replace(base.attack, mode=mode, critic_mode=self.critic_mode)
        return replace(base, attack=attack, aggregation=self.aggregation)


@dataclass(frozen=True)
class SweepSpec:
    sizes: tuple[int, ...]
    attacker_fraction: float

    def __post_init__(self) -> None:
        if not self.sizes or any(n < 2 for n in self.sizes):
            raise ConfigError("sweep sizes must be a non-empty list of integers >= 2")
        if not 0.0 < self.attacker_fraction < 1.0:
            raise ConfigError("attacker_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TheorySpec:
    families: tuple[str, ...]
    fractions: tuple[float, ...] = (0.1, 0.25, 0.5, 1.1)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    federation: FederationConfig
    n_seeds: int = 1
    output_dir: Path = Path("results")
    plot: bool = False
    conditions: tuple[Condition, ...] = (Condition("clean", "clean"),)
    record_timing: bool = False
    sweep: SweepSpec | None = None
    theory: TheorySpec | None = None
    n_attackers: int = 1
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if not _NAME_RE.match(self.name):
            raise ConfigError(f"experiment name {self.name!r} is not filesystem-safe")
        labels = [c.label for c in self.conditions]
        if len(set(labels)) != len(labels):
            raise ConfigError("conditions must be distinct")


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _float_list(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _str_list(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _opt_int(v: str):
    return None if v.lower() in ("", "none") else int(v)


# section -> key -> converter
SCHEMA = {
    "experiment": {"name": str, "n_seeds": int, "output_dir": str, "plot": _bool,
                   "conditions": _str_list, "record_timing": _bool,
                   "checkpoint_every": int},
    "federation": {"env": str, "learner": str, "n_agents": int, "rounds": int,
                   "local_steps": int, "attackers": int, "aggregation": str,
                   "defense_test_episodes": int, "eval_episodes": int, "gamma": float,
                   "lr": float, "master_seed": int, "max_steps": _opt_int, "ppo_clip": float},
    "attack": {"epsilon": float, "target": str, "critic_mode": str},
    "sweep": {"sizes": _int_list, "attacker_fraction": float},
    "theory": {"families": _str_list, "fractions": _float_list},
}

# keys whose invariants are checked after conversion
_NONNEGATIVE = {"rounds", "local_steps", "n_agents", "n_seeds", "attackers",
                "eval_episodes", "defense_test_episodes", "epsilon", "checkpoint_every"}


def read_sections(text: str, source: str = "<config>") -> dict[str, dict[str, tuple[str, int]]]:
    """Raw ``{section: {key: (value, line)}}``; comments start with ``#`` or ``;``."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{source}:{lineno}: malformed section header {raw.strip()!r}")
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key {key!r} appears before any section")
        if key not in SCHEMA[current]:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{current}]")
        if key in sections[current]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = (value, lineno)
    return sections


def _convert(sections, source):
    out: dict[str, dict] = {s: {} for s in SCHEMA}
    lines: dict[str, int] = {}
    for section, items in sections.items():
        for key, (value, lineno) in items.items():
            try:
                converted = SCHEMA[section][key](value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: key {key!r}: {exc}") from None
            if key in _NONNEGATIVE and isinstance(converted, (int, float)) and converted < 0:
                raise ConfigError(f"{source}:{lineno}: key {key!r} must be >= 0, got {value}")
            out[section][key] = converted
            lines[key] = lineno
    return out, lines


def parse_target(env_id: str, text: str | None):
    if text is None or text.lower() in ("", "none"):
        return None
    spec = envs.action_spec(env_id)
    if spec.discrete:
        target = int(text)
        if not 0 <= target < spec.n:
            raise ValueError(f"target action {target} outside 0..{spec.n - 1}")
        return target
    target = _float_list(text)
    if not spec.contains(target):
        raise ValueError(f"target {text} outside the action bounds")
    return target


def parse_config_text(text: str, source: str = "<config>") -> ExperimentSpec:
    values, lines = _convert(read_sections(text, source), source)
    exp, fed, att = values["experiment"], values["federation"], values["attack"]

    def at(key: str) -> str:
        return f"{source}:{lines[key]}: " if key in lines else f"{source}: "

    def build(key, fn):
        # attribute a validation failure to the key that caused it
        try:
            return fn()
        except ConfigError as exc:
            raise ConfigError(f"{at(key)}key {key!r}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{at(key)}key {key!r}: {exc}") from None

    for key in ("rounds", "local_steps", "n_agents", "n_seeds"):
        section = exp if key == "n_seeds" else fed
        if key in section and section[key] < 1:
            raise ConfigError(f"{at(key)}key {key!r} must be >= 1, got {section[key]}")

    env_id = fed.get("env", "cartpole")
    build("env", lambda: envs.action_spec(env_id))
    learner = build("learner", lambda: Learner(fed.get("learner", "vpg"),
                                               fed.get("ppo_clip", 0.2)))
    n_agents = fed.get("n_agents", 4)
    n_attackers = fed.get("attackers", 1)
    if n_attackers >= n_agents:
        raise ConfigError(f"{at('attackers')}key 'attackers' must be < n_agents")
    target = build("target", lambda: parse_target(env_id, att.get("target")))
    conditions = build("conditions", lambda: tuple(
        Condition.parse(c) for c in exp.get("conditions", ("clean",))))
    if not conditions:
        raise ConfigError(f"{at('conditions')}key 'conditions' is empty")
    if any(c.mode == "targeted" for c in conditions) and target is None:
        raise ConfigError(f"{at('conditions')}key 'conditions': targeted needs [attack] target")
    attack = build("epsilon", lambda: AttackConfig(
        "none", att.get("epsilon", 1.0), target, att.get("critic_mode", "dual")))
    federation = build("aggregation", lambda: FederationConfig(
        env_id=env_id,
        n_agents=n_agents,
        rounds=fed.get("rounds", 200),
        local_steps=fed.get("local_steps", 50),
        malicious=last_agents(n_agents, n_attackers),
        learner=learner,
        attack=attack,
        aggregation=fed.get("aggregation", "fedavg"),
        defense_test_episodes=fed.get("defense_test_episodes", 10),
        eval_episodes=fed.get("eval_episodes", 100),
        gamma=fed.get("gamma", 0.99),
        lr=fed.get("lr", 0.001),
        master_seed=fed.get("master_seed", 0),
        max_steps=fed.get("max_steps"),
    ))
    sweep = None
    if values["sweep"]:
        sw = values["sweep"]
        sweep = build("sizes", lambda: SweepSpec(sw.get("sizes", ()),
                                                 sw.get("attacker_fraction", 0.25)))
    theory = None
    if values["theory"]:
        th = values["theory"]
        theory = build("families", lambda: _theory_spec(th))
    name = exp.get("name", Path(source).stem if source != "<config>" else "experiment")
    return build("name", lambda: ExperimentSpec(
        name=name,
        federation=federation,
        n_seeds=exp.get("n_seeds", 1),
        output_dir=Path(exp.get("output_dir", f"results/{name}")),
        plot=exp.get("plot", False),
        conditions=conditions,
        record_timing=exp.get("record_timing", False),
        sweep=sweep,
        theory=theory,
        n_attackers=n_attackers,
        checkpoint_every=exp.get("checkpoint_every", 0),
    ))


def _theory_spec(values: dict) -> TheorySpec:
    from .theory import PRESET_FAMILIES

    families = values.get("families", ("convex-1d",))
    unknown = [f for f in families if f not in PRESET_FAMILIES]
    if unknown:
        raise ConfigError(f"unknown analytic families {unknown}; known: {sorted(PRESET_FAMILIES)}")
    fractions = values.get("fractions", TheorySpec.__dataclass_fields__["fractions"].default)
    if any(not math.isfinite(f) or f < 0 for f in fractions):
        raise ConfigError("fractions must be finite and >= 0")
    return TheorySpec(tuple(families), tuple(fractions))


def parse_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def attacker_count(n_agents: int, fraction: float) -> int:
    """``ceil(fraction * n)``, robust to binary rounding of the product."""
    return max(1, math.ceil(round(fraction * n_agents, 9)))
