"""``frlpoison`` command line: run, sweep, theory-check, report.

Exit status is 0 on success, 2 for a configuration error and 1 for any other
failure (including a theorem check that does not hold inside its regime).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError
from .experiment import report, run_experiment, sweep_proportion


def cmd_run(args) -> int:
    spec = parse_config(args.config)
    summary = run_experiment(spec)
    print(summary.table())
    print(f"wrote {summary.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    spec = parse_config(args.config)
    if spec.sweep is None:
        raise ConfigError(f"{args.config}: sweep needs a [sweep] section with sizes")
    for n, summary in sweep_proportion(spec, spec.sweep.sizes,
                                       spec.sweep.attacker_fraction).items():
        print(f"n={n} attackers={summary.n_attackers}")
        print(summary.table())
    print(f"wrote {spec.output_dir}")
    return 0


def cmd_theory(args) -> int:
    from .theory import PRESET_FAMILIES, compute_B, estimate_Lr, eps_plus, verify_theorem, \
        write_reports_csv

    spec = parse_config(args.config)
    if spec.theory is None:
        raise ConfigError(f"{args.config}: theory-check needs a [theory] section")
    out = Path(args.out) if args.out else Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    failed = False
    for family in spec.theory.families:
        setting = PRESET_FAMILIES[family]
        b = compute_B(setting)
        if b.defined and b.value > 0:
            ep = eps_plus(setting, b.value, estimate_Lr(setting).value)
            epsilons = [f * ep for f in spec.theory.fractions]
        else:
            epsilons = list(spec.theory.fractions)
        reports = verify_theorem(setting, epsilons)
        write_reports_csv(out / f"theory_{family}.csv", reports)
        for r in reports:
            bad = r.in_regime and not r.inequality_holds
            if r.stated_bound_holds is False:
                bad = True
            failed |= bad
            status = ("precondition unmet: " + r.notes) if not r.precondition_met else (
                "FAIL" if bad else "ok")
            print(f"{family:<20} eps={r.epsilon:<12.6g} B={r.B:<10.6g} "
                  f"eps+={r.eps_plus:<10.6g} alpha={r.alpha_observed:<12.6g} {status}")
    print(f"wrote {out}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    print(report(args.directory))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frlpoison", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run every condition and seed of a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="attacker-proportion sweep over system sizes")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("theory-check", help="check the decrease guarantee on analytic families")
    p.add_argument("config")
    p.add_argument("--out", help="directory for theory CSVs (default: output_dir)")
    p.set_defaults(func=cmd_theory)
    p = sub.add_parser("report", help="summarise aggregate CSVs in a results directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI maps every failure to status 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
