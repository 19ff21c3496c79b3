"""Pattern generators shared by the tests."""

import numpy as np

from lagfit.pattern import MarkedPointPattern, Window


def random_pattern(rng, n, window=None, r_max=6.0, r_hi=None, min_dist=0.0):
    """Uniform generators with uniform radii on ``[0, r_hi]``."""
    if window is None:
        window = Window(*rng.uniform(6.0, 14.0, 3))
    r_hi = r_max if r_hi is None else r_hi
    pts = rng.random((n, 3)) * window.sides
    if min_dist > 0:
        # sequential inhibition
        chosen = []
        for p in pts:
            if all(window.distance(p, q) >= min_dist for q in chosen):
                chosen.append(p)
        pts = np.array(chosen)
    radii = rng.uniform(0.0, r_hi, len(pts))
    return MarkedPointPattern(window, pts, radii, r_max)


def cubic_lattice(n=4, spacing=1.0, radius=0.0, offset=0.5):
    g = (np.arange(n) + offset) * spacing
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    w = Window(n * spacing, n * spacing, n * spacing)
    return MarkedPointPattern(w, pts, np.full(len(pts), radius))
