#!/usr/bin/env python3
"""Run the long-time sweep for a config and print the convergence table.

    python scripts/run_longtime.py configs/quad1d.json --out results/quad1d
"""
import argparse
import time

from constrained_mfg.lab import convergence_csv, load_config, run_longtime_experiment, write_report


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    rep = run_longtime_experiment(cfg, out_dir=args.out, threads=args.threads)
    if args.out:
        write_report(rep, cfg, args.out)
    print(convergence_csv(rep), end="")
    print(f"slopes: E_u {rep.slope_E_u:.3f}, E_F {rep.slope_E_F:.3f} (reference {rep.exponent:.3f})")
    print(f"envelope E_u {rep.envelope('E_u')}, E_F {rep.envelope('E_F')}")
    print(f"lambda_bar {rep.lambda_bar:.6g}; {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
