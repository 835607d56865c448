"""Print B, L_r, eps+ and the observed decrease for every analytic family."""

import argparse

from frlpoison.theory import PRESET_FAMILIES, compute_B, eps_plus, estimate_Lr, verify_theorem


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fractions", default="0.1,0.25,0.5,1.1",
                        help="budgets as multiples of eps+")
    args = parser.parse_args()
    fractions = [float(f) for f in args.fractions.split(",")]
    for name, setting in PRESET_FAMILIES.items():
        b = compute_B(setting)
        if not (b.defined and b.value > 0):
            print(f"{name}: precondition unmet ({b.reason or 'B <= 0'})\n")
            continue
        lr = estimate_Lr(setting)
        ep = eps_plus(setting, b.value, lr.value)
        print(f"{name}: B={b.value:.6g} (fd/closed gap {b.relative_gap:.1e}) "
              f"L_r={lr.value:.6g} [{lr.method}] eps+={ep:.6g}")
        for r in verify_theorem(setting, [f * ep for f in fractions]):
            extra = ""
            if r.stated_bound is not None:
                extra = (f" stated eps+^2/8={r.stated_bound:.3g} "
                         f"quadratic L_r*eps+^2/8={r.quadratic_bound:.3g}")
            print(f"  eps={r.epsilon:<10.4g} alpha={r.alpha_observed:<12.5g} "
                  f"decrease={'yes' if r.inequality_holds else 'no '} "
                  f"in_regime={r.in_regime}{extra}")
        print()


if __name__ == "__main__":
    main()
