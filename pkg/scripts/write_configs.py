#!/usr/bin/env python3
"""Write the default INI config of every experiment kind, as a starting point for edits."""

import argparse
from pathlib import Path

from bosepolaron.experiments import KINDS, default_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="configs")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in KINDS:
        path = out / f"{kind}.ini"
        path.write_text(default_config(kind).to_ini())
        print(path)


if __name__ == "__main__":
    main()
