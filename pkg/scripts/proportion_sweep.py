"""Attacker-proportion sweep: poisoning gap at each system size.

    python scripts/proportion_sweep.py configs/desk_cartpole_proportion.cfg
"""

import argparse

from frlpoison.config import parse_config
from frlpoison.errors import ConfigError
from frlpoison.experiment import sweep_proportion


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--sizes", help="override the config's sizes, e.g. 4,8,16")
    args = parser.parse_args()
    spec = parse_config(args.config)
    if spec.sweep is None and not args.sizes:
        raise ConfigError("config has no [sweep] section; pass --sizes")
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else spec.sweep.sizes
    fraction = spec.sweep.attacker_fraction if spec.sweep else 0.25
    summaries = sweep_proportion(spec, sizes, fraction)
    print(f"{'n':>4} {'attackers':>9} {'clean':>9} {'poisoned':>9} {'gap':>7}")
    for n, s in summaries.items():
        clean = s["clean"].final_means.mean()
        pois = s["untargeted"].final_means.mean()
        print(f"{n:>4} {s.n_attackers:>9} {clean:>9.2f} {pois:>9.2f} "
              f"{(clean - pois) / clean:>7.1%}")


if __name__ == "__main__":
    main()
