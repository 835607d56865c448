"""Multi-seed experiment runs, proportion sweeps, CSV aggregation and plots.

Layout of an output directory::

    <condition>_seed<k>.csv      per-round records of one run
    <condition>_aggregate.csv    mean / std across seeds per round
    reward.png                   optional, one line per condition
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import Condition, ExperimentSpec, attacker_count
from .errors import ConfigError
from .federation import (
    FederationConfig,
    RoundRecord,
    last_agents,
    read_records_csv,
    run_federation,
    write_records_csv,
)

FINAL_WINDOW = 10
AGGREGATE_COLUMNS = ("round", "mean_reward", "std_reward", "mean_target_similarity",
                     "std_target_similarity", "mean_attack_cost", "n_seeds")


def worker_count(jobs: int) -> int:
    """Parallel runs allowed: ``FRL_THREADS`` if set, else the CPU count."""
    env = os.environ.get("FRL_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"FRL_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("FRL_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, jobs))


def seed_config(base: FederationConfig, condition: Condition, seed_index: int) -> FederationConfig:
    # the same seed index shares the master seed, hence the initial model, across conditions
    return replace(condition.apply(base), master_seed=base.master_seed + seed_index)


def final_mean(records: list[RoundRecord], window: int = FINAL_WINDOW) -> float:
    """Mean evaluation reward over the last ``window`` rounds (round 0 excluded)."""
    trained = [r.eval_mean_reward for r in records if r.round > 0]
    return float(np.mean(trained[-window:]))


@dataclass
class ConditionResult:
    condition: Condition
    runs: list[list[RoundRecord]]

    @property
    def final_means(self) -> np.ndarray:
        return np.array([final_mean(r) for r in self.runs])

    @property
    def final_round_rewards(self) -> np.ndarray:
        return np.array([r[-1].eval_mean_reward for r in self.runs])

    @property
    def final_similarities(self) -> np.ndarray:
        return np.array([np.nan if r[-1].target_similarity is None else r[-1].target_similarity
                         for r in self.runs])


@dataclass
class ExperimentSummary:
    name: str
    output_dir: Path
    results: dict[str, ConditionResult]
    n_attackers: int = 0

    def __getitem__(self, label: str) -> ConditionResult:
        return self.results[label]

    def table(self) -> str:
        lines = [f"{'condition':<24} {'final-10 mean':>14} {'std':>10} {'seeds':>6}"]
        for label, res in self.results.items():
            fm = res.final_means
            lines.append(f"{label:<24} {fm.mean():>14.3f} {fm.std():>10.3f} {fm.size:>6}")
        return "\n".join(lines)


def _run_one(job) -> list[RoundRecord]:
    cfg, checkpoint_dir, every = job
    return run_federation(cfg, checkpoint_dir, every).records


def run_configs(configs: list[FederationConfig], checkpoint_dirs=None,
                checkpoint_every: int = 0) -> list[list[RoundRecord]]:
    """Run independent federations, in worker processes when more than one is allowed."""
    dirs = checkpoint_dirs if checkpoint_dirs is not None else [None] * len(configs)
    jobs = [(c, d, checkpoint_every) for c, d in zip(configs, dirs)]
    workers = worker_count(len(jobs))
    if workers == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def aggregate_rows(runs: list[list[RoundRecord]]) -> list[list]:
    rows = []
    for p in range(len(runs[0])):
        at = [run[p] for run in runs]
        reward = np.array([r.eval_mean_reward for r in at])
        sims = [r.target_similarity for r in at]
        sim = None if any(s is None for s in sims) else np.array(sims, dtype=float)
        cost = np.array([r.attack_cost_total for r in at])
        rows.append([at[0].round, repr(float(reward.mean())), repr(float(reward.std())),
                     "" if sim is None else repr(float(sim.mean())),
                     "" if sim is None else repr(float(sim.std())),
                     repr(float(cost.mean())), len(at)])
    return rows


def write_aggregate_csv(path: str | Path, runs: list[list[RoundRecord]]) -> None:
    """Per-round mean and population std across seeds."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        writer.writerows(aggregate_rows(runs))


def run_experiment(spec: ExperimentSpec) -> ExperimentSummary:
    """Every (condition, seed) run of ``spec``, written under ``spec.output_dir``."""
    out = Path(spec.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    jobs = [(c, k) for c in spec.conditions for k in range(spec.n_seeds)]
    ckpt = None
    if spec.checkpoint_every:
        ckpt = [out / "checkpoints" / f"{c.label}_seed{k}" for c, k in jobs]
    records = run_configs([seed_config(spec.federation, c, k) for c, k in jobs], ckpt,
                          spec.checkpoint_every)
    results = {c.label: ConditionResult(c, []) for c in spec.conditions}
    for (c, k), recs in zip(jobs, records):
        results[c.label].runs.append(recs)
        _write(write_records_csv, out / f"{c.label}_seed{k}.csv", recs, spec.record_timing)
    for label, res in results.items():
        _write(write_aggregate_csv, out / f"{label}_aggregate.csv", res.runs)
    summary = ExperimentSummary(spec.name, out, results, len(spec.federation.malicious))
    if spec.plot:
        plot_rewards(out, out / "reward.png", title=spec.name)
    return summary


def _write(fn, path: Path, *args) -> None:
    try:
        fn(path, *args)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def sweep_proportion(spec: ExperimentSpec, sizes, attacker_fraction: float
                     ) -> dict[int, ExperimentSummary]:
    """Repeat ``spec`` at each system size with ``ceil(fraction * n)`` attackers."""
    if not 0.0 < attacker_fraction < 1.0:
        raise ConfigError("attacker_fraction must lie in (0, 1)")
    summaries = {}
    for n in sizes:
        count = attacker_count(n, attacker_fraction)
        fed = replace(spec.federation, n_agents=n, malicious=last_agents(n, count))
        sub = replace(spec, name=f"{spec.name}_n{n}", federation=fed, n_attackers=count,
                      output_dir=Path(spec.output_dir) / f"n{n}")
        summaries[n] = run_experiment(sub)
    write_sweep_csv(Path(spec.output_dir) / "sweep_summary.csv", summaries)
    return summaries


def write_sweep_csv(path: Path, summaries: dict[int, ExperimentSummary]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n_agents", "n_attackers", "condition", "final_mean_reward",
                         "final_std_reward"])
        for n, summary in summaries.items():
            for label, res in summary.results.items():
                fm = res.final_means
                writer.writerow([n, summary.n_attackers, label, repr(float(fm.mean())),
                                 repr(float(fm.std()))])


def load_aggregates(directory: str | Path) -> dict[str, list[dict]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such results directory: {directory}")
    out = {}
    for path in sorted(directory.glob("*_aggregate.csv")):
        with open(path, newline="") as fh:
            out[path.name[: -len("_aggregate.csv")]] = list(csv.DictReader(fh))
    return out


def report(directory: str | Path) -> str:
    """Final-window summary of every condition found in a results directory."""
    directory = Path(directory)
    aggregates = load_aggregates(directory)
    if not aggregates:
        subdirs = sorted(p for p in directory.iterdir() if p.is_dir())
        parts = [f"[{d.name}]\n{report(d)}" for d in subdirs if load_aggregates(d)]
        if not parts:
            raise FileNotFoundError(f"no aggregate CSVs under {directory}")
        return "\n\n".join(parts)
    lines = [f"{'condition':<24} {'final reward':>13} {'final-10 mean':>14} {'rounds':>7}"]
    for label, rows in aggregates.items():
        rewards = [float(r["mean_reward"]) for r in rows if int(r["round"]) > 0]
        lines.append(f"{label:<24} {rewards[-1]:>13.3f} "
                     f"{np.mean(rewards[-FINAL_WINDOW:]):>14.3f} {len(rewards):>7}")
    return "\n".join(lines)


def per_seed_records(directory: str | Path, label: str) -> list[list[dict]]:
    paths = sorted(Path(directory).glob(f"{label}_seed*.csv"),
                   key=lambda p: int(p.stem.rsplit("seed", 1)[1]))
    return [read_records_csv(p) for p in paths]


def plot_rewards(directory: str | Path, path: str | Path, title: str = "") -> None:
    """Reward vs round, mean across seeds with a one-std band."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in load_aggregates(directory).items():
        rounds = np.array([int(r["round"]) for r in rows])
        mean = np.array([float(r["mean_reward"]) for r in rows])
        std = np.array([float(r["std_reward"]) for r in rows])
        ax.plot(rounds, mean, label=label)
        ax.fill_between(rounds, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("communication round")
    ax.set_ylabel("mean evaluation reward")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
