#!/usr/bin/env python3
"""Run the four benchmark presets and print a one-line summary for each.

Usage: python3 scripts/run_all.py [--out BASEDIR]
"""

import argparse
import os
import sys

import numpy as np

from dynmc.config import get_preset
from dynmc.experiment import run_experiment

BENCHMARKS = ("gravity-dual", "gravity-triple", "viscous", "interface")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="base artifact directory")
    args = ap.parse_args(argv)

    print(f"{'preset':<16}{'time':>7}  {'e_V max %':>10}  {'e_C max %':>10}"
          f"  {'ordering':>8}")
    for name in BENCHMARKS:
        outdir = os.path.join(args.out, name) if args.out else None
        res = run_experiment(get_preset(name), outdir=outdir)
        rep = res.report
        ev = np.nanmax(rep.eV.relative)
        ec = max(np.nanmax(rep.eC_ref_vel), np.nanmax(rep.eC_mh_vel))
        print(f"{name:<16}{res.wall_time:>6.1f}s  {ev:>10.3f}  {ec:>10.3f}"
              f"  {'ok' if rep.ordering_ok else 'FLAGGED':>8}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
