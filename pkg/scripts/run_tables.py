"""Regenerate the J=3 simulation tables and the J=6 metrics as CSV.

    python scripts/run_tables.py --reps 2000 --out results/

Tables 1-3 are the adequate-overlap design at N = 1500, 4500, 6000 and
tables 4-6 the lack-of-overlap design at the same sizes. The six-arm
design is written to ``j6_N{n}.csv`` (one row per estimator and pair).
"""

import argparse
import time
from pathlib import Path

from gcfate import get_design, run_monte_carlo

SIZES = (1500, 4500, 6000)
TABLES = {i + 1: (name, n) for i, (name, n) in enumerate(
    [("design1-adequate", n) for n in SIZES] + [("design2-lack", n) for n in SIZES])}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--tables", default="1,2,3,4,5,6", help="comma list; empty for none")
    ap.add_argument("--j6", action="store_true", help="also run the six-arm design")
    ap.add_argument("--bonferroni", action="store_true", help="simultaneous intervals")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    todo = [int(t) for t in args.tables.split(",") if t.strip()]
    runs = [(f"table{t}", *TABLES[t]) for t in todo]
    if args.j6:
        runs += [(f"j6_N{n}", "design3-j6", n) for n in SIZES]
    for tag, name, n in runs:
        design = get_design(name, n=n, reps=args.reps, seed=args.seed,
                            simultaneous=args.bonferroni)
        t0 = time.perf_counter()
        rep = run_monte_carlo(design, threads=args.threads)
        rep.to_csv(out / f"{tag}.csv")
        text = rep.to_table()
        (out / f"{tag}.txt").write_text(text + "\n", encoding="utf-8")
        print(f"== {tag} ({time.perf_counter() - t0:.0f}s)")
        print(text)
        if rep.failures:
            print(f"dropped replications: {[r for r, _ in rep.failures]}")


if __name__ == "__main__":
    main()
