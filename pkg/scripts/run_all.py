#!/usr/bin/env python3
"""Run every experiment kind at its default config and write results under one directory."""

import argparse
import time
from pathlib import Path

from bosepolaron.experiments import KINDS, default_config, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="parent output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=KINDS, help="subset of kinds to run")
    args = ap.parse_args()
    for kind in args.only or KINDS:
        cfg = default_config(kind)
        cfg.threads = args.threads
        t0 = time.time()
        res = run(cfg, Path(args.out) / kind)
        print(f"{kind:24s} {len(res.rows):4d} rows  {time.time() - t0:7.1f} s")
        for key, (s, e) in sorted(res.slopes.items()):
            print(f"    slope {key}: {s:+.3f} +- {e:.3f}")


if __name__ == "__main__":
    main()
