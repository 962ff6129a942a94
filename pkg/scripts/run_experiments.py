#!/usr/bin/env python3
"""Run experiments through the shared job cache and print the capacity summary.

Interrupted runs resume: every finished (model, n, T) job is cached under
``<outdir>/cache`` and reused on the next invocation.

    python scripts/run_experiments.py --profile fast --outdir results
    python scripts/run_experiments.py exp4 --profile full --workers 4
"""

import argparse
import logging
import sys

from osplab.experiments import EXPERIMENTS, Lab, TheoremViolation, run_experiments


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("names", nargs="*", metavar="exp", help=f"any of {', '.join(EXPERIMENTS)} (default: all)")
    parser.add_argument("--profile", choices=("fast", "full"), default="fast")
    parser.add_argument("--outdir", default="results")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args(argv)
    unknown = sorted(set(args.names) - set(EXPERIMENTS))
    if unknown:
        parser.error(f"unknown experiment(s): {', '.join(unknown)}")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    lab = Lab(profile=args.profile, seed=args.seed, outdir=args.outdir, workers=args.workers)
    try:
        results = run_experiments(args.names or list(EXPERIMENTS), lab)
    except TheoremViolation as exc:
        print(f"THEOREM VIOLATION: {exc}", file=sys.stderr)
        return 3
    for res in results:
        print(f"{res.experiment} ({res.seconds / 60:.1f} min)")
        for s in res.summaries:
            print(f"  {s.arch:<20} T={s.T:<3} n*={s.n_star:<3} bound={s.bound_n_star:<7} r={s.r:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
