#!/usr/bin/env python3
"""Critical value of each built-in 1D model from value iteration vs -min L(., 0), across resolutions."""
import argparse
import time

import numpy as np

from constrained_mfg.geometry import interval
from constrained_mfg.grid import Grid
from constrained_mfg.hjsolver import ergodic_solve, max_adjacent_slope
from constrained_mfg.library import ONE_D_MODELS, named_model
from constrained_mfg.mather import mather_set


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, nargs="+", default=[41, 81, 161, 321])
    args = ap.parse_args()
    print(f"{'model':16s} {'nodes':>6s} {'c':>12s} {'c_static':>12s} {'gap':>10s} {'lip':>7s} {'its':>5s} mather points")
    for name in ONE_D_MODELS:
        m = named_model(name)
        for n in args.nodes:
            g = Grid(interval(), n)
            t0 = time.perf_counter()
            sol = ergodic_solve(m, g, g.h)
            dt = time.perf_counter() - t0
            data = mather_set(m, g)
            pts = np.round(data.points[:, 0], 4)
            shown = pts.tolist() if pts.size <= 4 else f"[{pts[0]} .. {pts[-1]}] ({pts.size} nodes)"
            print(
                f"{name:16s} {n:6d} {sol.critical_value + 0.0:12.6g} {data.critical_value + 0.0:12.6g} "
                f"{abs(sol.critical_value - data.critical_value):10.2e} {max_adjacent_slope(sol.u, g):7.3f} "
                f"{sol.iterations:5d} {shown}  ({dt:.2f}s)"
            )


if __name__ == "__main__":
    main()
