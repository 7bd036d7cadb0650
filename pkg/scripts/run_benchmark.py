#!/usr/bin/env python3
"""Run one benchmark preset end to end and print its error table.

Usage: python3 scripts/run_benchmark.py PRESET [OUTDIR] [KEY=VALUE ...]
"""

import argparse
import sys

import numpy as np

from dynmc.config import apply_overrides, get_preset
from dynmc.experiment import run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("preset")
    ap.add_argument("outdir", nargs="?", default=None)
    ap.add_argument("overrides", nargs="*", metavar="KEY=VALUE")
    args = ap.parse_args(argv)

    cfg = apply_overrides(get_preset(args.preset), args.overrides)
    res = run_experiment(cfg, outdir=args.outdir)
    rep = res.report

    print(f"\n{cfg.name} ({cfg.approach}) — {res.wall_time:.1f}s")
    print(f"{'metric':<14}" + "".join(f"  continuum {k:<3}"
                                      for k in range(rep.n)))
    rows = [("e_V %", rep.eV.relative), ("e_C(ref-V) %", rep.eC_ref_vel),
            ("e_C(mh-V) %", rep.eC_mh_vel), ("e_C between %", rep.eC_between)]
    for name, arr in rows:
        cells = "".join(f"  {v:12.3f}" if np.isfinite(v) else f"  {'n/a':>12}"
                        for v in arr)
        print(f"{name:<14}{cells}")
    print(f"e_V global %  {rep.eV.global_relative:12.3f}")
    print(f"ordering_ok   {rep.ordering_ok}")
    if args.outdir:
        print(f"artifacts in {args.outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
