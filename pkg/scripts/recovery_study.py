"""Simulate-and-refit study for the point and radii models.

Points: Strauss process simulated by birth-death-move and refitted as a
two-scale model with the interaction range chosen from a grid.  Radii:
beta+dvol model on a jittered lattice with spacing above the radius bound
(so every radius vector is feasible), simulated by Metropolis-within-Gibbs
and refitted by MPLE.  Prints per-parameter mean, sd and the z-score of the
mean against the truth.
"""
import argparse
import json

import numpy as np

from lagfit.config import derive_seed
from lagfit.gibbs_points import MultiscaleParams, fit_mple_points, simulate_bdm
from lagfit.pattern import MarkedPointPattern, Window
from lagfit.radii_model import RadiiModelSpec, RadiiPLData, fit_mple_radii, simulate_radii_mwg


def summarise(name, est, truth):
    est = np.asarray(est)
    mean, sd = est.mean(axis=0), est.std(axis=0, ddof=1)
    z = (mean - truth) / (sd / np.sqrt(len(est)))
    print(json.dumps({"model": name, "replicates": len(est), "truth": list(map(float, truth)),
                      "mean": mean.tolist(), "sd": sd.tolist(), "z": z.tolist()}))


def points_study(n, seed):
    true = MultiscaleParams(0.06, (0.3,), (1.5,))
    w = Window(15, 15, 15)
    est, deltas = [], []
    for k in range(n):
        pts, _ = simulate_bdm(true, w, 100_000, derive_seed(seed, 1, k), burn_in=50_000)
        fit = fit_mple_points((w, pts), 2, [1.0, 1.5, 2.0], lattice=(30, 30, 30))
        est.append([fit.params.beta, fit.params.gammas[0]])
        deltas.append(fit.params.deltas[0])
    summarise("strauss", est, [true.beta, true.gammas[0]])
    print(json.dumps({"selected_delta_counts": {str(d): deltas.count(d) for d in sorted(set(deltas))}}))


def radii_study(n, seed, sweeps, nodes):
    rng = np.random.default_rng(seed)
    g = (np.arange(4) + 0.5) * 7.0
    base = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    w = Window(28, 28, 28)
    pos = w.wrap(base + rng.uniform(-0.4, 0.4, base.shape))
    theta = np.array([1.0, 1.0, -0.002])
    spec = RadiiModelSpec.from_names("beta,dvol", theta)
    est = []
    for k in range(n):
        r, _ = simulate_radii_mwg(spec, (w, pos), sweeps, 1.0, derive_seed(seed, 2, k), np.full(len(pos), 3.0))
        data = RadiiPLData.build(MarkedPointPattern(w, pos, r), nodes)
        est.append(fit_mple_radii("beta,dvol", data=data).spec.theta)
    summarise("beta+dvol", est, theta)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=8)
    ap.add_argument("--sweeps", type=int, default=60)
    ap.add_argument("--nodes", type=int, default=60)
    ap.add_argument("--only", choices=["points", "radii"])
    args = ap.parse_args(argv)
    if args.only != "radii":
        points_study(args.replicates, args.seed)
    if args.only != "points":
        radii_study(args.replicates, args.seed, args.sweeps, args.nodes)


if __name__ == "__main__":
    main()
