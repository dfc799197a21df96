"""Epsilon ladders of the perturbative objects and of the geometric generator on random 3x3 (x) 3x3 models."""

import argparse

from optransport import verification


def table(title, eps, rows):
    print(title)
    print("  " + "key".ljust(18) + "".join(f"{e:>12.2e}" for e in eps) + "   slope")
    for key, (errs, slope) in rows.items():
        print("  " + key.ljust(18) + "".join(f"{x:>12.3e}" for x in errs) + f"   {slope:.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--grid", type=int, default=20001, help="grid for the generator ladder")
    args = ap.parse_args()
    lad = verification.perturbation_ladder(seed=args.seed)
    table("eigen-objects vs exact diagonalisation", lad["eps"],
          {k: (lad["errors"][k], lad["slopes"][k]) for k in lad["errors"]})
    rows = {}
    for label, kw in (("moving E, <xi|xi'>", dict(e_drift=True, eta="diagonal")),
                      ("moving E, full", dict(e_drift=True, eta="complete")),
                      ("static E", dict(e_drift=False, eta="diagonal"))):
        g = verification.generator_ladder(seed=args.seed, count=args.grid, **kw)
        rows[label] = (g["errors"], g["slope"])
    table("geometric generator residual |(A - A1 - C) rho|", lad["eps"], rows)


if __name__ == "__main__":
    main()
