#!/usr/bin/env python3
"""Extended excitation-number sweep: <N>_t under the quadratic Hamiltonian versus Lam at several times."""

import argparse

from bosepolaron.experiments import default_config, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lams", type=float, nargs="+", default=[8.0, 16.0, 32.0, 64.0])
    ap.add_argument("--times", type=float, nargs="+", default=[0.5, 1.0])
    ap.add_argument("--out", default="results/excitation-growth-times")
    args = ap.parse_args()
    for t in args.times:
        cfg = default_config("excitation-growth")
        cfg.sweep.lams = args.lams
        cfg.integrator.t_final = t
        res = run(cfg, f"{args.out}/t{t}")
        for r in res.rows:
            print(f"t={t:4.2f} Lam={r['Lam']:6.1f} modes={r['n_modes']:4d} <N>={r['N']:.5f} map={r['N_map']:.5f}")
        for key, (s, e) in res.slopes.items():
            print(f"  slope {key}: {s:+.3f} +- {e:.3f}")


if __name__ == "__main__":
    main()
