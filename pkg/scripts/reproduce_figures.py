#!/usr/bin/env python3
"""Run the shipped scenario library and collect the CSV/JSON artifacts.

By default this executes the quick scenarios; pass --all for the full set
(the steady-state and sweep scenarios take tens of minutes each on a small
machine) or name specific scenarios. Example:

    python scripts/reproduce_figures.py --out results fig2c fig4_entanglement
"""

import argparse
import sys
import time

from optomech import runner

QUICK = ["fig2a", "fig2c", "fig2f", "fig4_entanglement", "ladder_trace"]
HEAVY = ["rwa_validation", "fig5a", "fig5b", "fig5c", "fig6a", "fig6b", "fig6c",
         "fig3_sweep", "table1_matrix"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenarios", nargs="*", help="scenario names (default: quick set)")
    ap.add_argument("--all", action="store_true", help="run the full library")
    ap.add_argument("--out", default="results", help="output root directory")
    args = ap.parse_args(argv)

    names = args.scenarios or (QUICK + HEAVY if args.all else QUICK)
    for name in names:
        sc = runner.load_shipped(name)
        print(f"== {name} ...", flush=True)
        t0 = time.time()
        bundle = runner.run(sc)
        written = runner.emit(bundle, f"{args.out}/{name}")
        print(f"   {time.time() - t0:.0f} s, {len(written)} files")
        for key in ("t2", "min_fidelity", "steady_state"):
            if key in bundle.metadata:
                print(f"   {key}: {bundle.metadata[key]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
