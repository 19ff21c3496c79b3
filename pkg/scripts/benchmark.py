"""Wall-clock timings of the main kernels as a function of pattern size.

For each size: full tessellation build, mean single-radius update, one
radii MWG sweep and a 100k-step birth-death-move run at matching intensity.
"""
import argparse
import json
import time

import numpy as np

from lagfit.gibbs_points import MultiscaleParams, simulate_bdm
from lagfit.pattern import MarkedPointPattern, Window
from lagfit.radii_model import RadiiModelSpec, simulate_radii_mwg
from lagfit.tessellation import build_tessellation, update_generator


def inhibited_positions(rng, n, window, min_dist):
    pts = []
    while len(pts) < n:
        p = rng.random(3) * window.sides
        if all(window.distance(p, q) >= min_dist for q in pts):
            pts.append(p)
    return np.array(pts)


def timed(f):
    t0 = time.perf_counter()
    out = f()
    return out, time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 250, 500])
    ap.add_argument("--density", type=float, default=0.0168, help="points per unit volume")
    ap.add_argument("--updates", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    build_tessellation(MarkedPointPattern(Window(10, 10, 10), rng.random((20, 3)) * 10, np.ones(20)))  # JIT warm-up
    for n in args.sizes:
        side = (n / args.density) ** (1 / 3)
        w = Window(side, side, side)
        pos = inhibited_positions(rng, n, w, 1.25)
        radii = rng.uniform(1.0, 3.0, n)
        tess, t_build = timed(lambda: build_tessellation(MarkedPointPattern(w, pos, radii)))
        t0 = time.perf_counter()
        for _ in range(args.updates):
            tess, _ = update_generator(tess, int(rng.integers(n)), radius=float(rng.uniform(1.0, 3.0)))
        t_update = (time.perf_counter() - t0) / args.updates
        spec = RadiiModelSpec.from_names("beta,nof,dvol", [1.0, 1.0, 0.0, 0.0])
        # equal radii give a Voronoi diagram, where every cell is non-empty
        _, t_sweep = timed(lambda: simulate_radii_mwg(spec, (w, pos), 1, 0.3, 1, np.full(n, 2.0)))
        params = MultiscaleParams(args.density, (0.5, 0.85), (1.25, 2.25))
        _, t_bdm = timed(lambda: simulate_bdm(params, w, 100_000, 1, initial=pos, burn_in=0))
        print(json.dumps({"n": n, "window_side": round(side, 2), "build_s": round(t_build, 3),
                          "update_s": round(t_update, 4), "mwg_sweep_s": round(t_sweep, 3),
                          "bdm_100k_s": round(t_bdm, 3)}))


if __name__ == "__main__":
    main()
