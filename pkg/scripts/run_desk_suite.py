"""Run every desk preset in configs/ and print a summary table for each.

    python scripts/run_desk_suite.py [--only vpg,ppo] [--out results/desk]
"""

import argparse
import dataclasses
import time
from pathlib import Path

from frlpoison.config import parse_config
from frlpoison.experiment import run_experiment, sweep_proportion

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--only", help="comma-separated preset suffixes, e.g. vpg,defense")
    parser.add_argument("--out", default="results/desk")
    args = parser.parse_args()
    wanted = set(args.only.split(",")) if args.only else None
    for path in sorted(CONFIGS.glob("desk_*.cfg")):
        suffix = path.stem.removeprefix("desk_cartpole_")
        if wanted and suffix not in wanted:
            continue
        spec = parse_config(path)
        spec = dataclasses.replace(spec, output_dir=Path(args.out) / spec.name, plot=True)
        start = time.perf_counter()
        print(f"== {path.name}")
        if spec.sweep is not None:
            for n, summary in sweep_proportion(spec, spec.sweep.sizes,
                                               spec.sweep.attacker_fraction).items():
                print(f"-- n={n} attackers={summary.n_attackers}")
                print(summary.table())
        else:
            print(run_experiment(spec).table())
        print(f"({time.perf_counter() - start:.0f} s)\n")


if __name__ == "__main__":
    main()
