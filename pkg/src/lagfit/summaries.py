"""Summary statistics on the torus: L, F, G, mark correlation and kernel densities.

All distances are torus distances, so no edge correction is applied.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BandwidthNonpositive, GridTooCoarse, InvalidPattern
from .pattern import MarkedPointPattern, Window

CHARACTERISTICS = ("nof", "vol", "surf", "tel", "spher", "dvol")
MIN_GRID = 64
F_LATTICE = 32


@dataclass
class CurveSet:
    """Curves on a common grid: an optional observed curve and simulated replicates.

    ``blocks`` lists ``(label, start, stop)`` index ranges when several
    summaries are concatenated into one long vector.
    """

    label: str
    grid: np.ndarray
    observed: np.ndarray = None
    sims: np.ndarray = None
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, float).reshape(-1)
        if self.observed is not None:
            self.observed = np.asarray(self.observed, float).reshape(-1)
            if len(self.observed) != len(self.grid):
                raise ValueError("observed curve and grid differ in length")
        if self.sims is None:
            self.sims = np.zeros((0, len(self.grid)))
        sims = np.asarray(self.sims, float)
        self.sims = sims.reshape(-1, len(self.grid)) if len(self.grid) else sims.reshape(len(sims), 0)
        if not self.blocks:
            self.blocks = [(self.label, 0, len(self.grid))]
        for _, a, b in self.blocks:
            g = self.grid[a:b]
            if len(g) > 1 and np.any(np.diff(g) <= 0):
                raise ValueError(f"grid of {self.label!r} is not strictly increasing")

    @property
    def n_replicates(self) -> int:
        return len(self.sims)

    def with_sims(self, sims) -> "CurveSet":
        return CurveSet(self.label, self.grid, self.observed, np.asarray(sims, float), list(self.blocks))

    def mean(self) -> np.ndarray:
        return self.sims.mean(axis=0)

    def to_csv(self, path) -> None:
        write_curves_csv(path, self)


def write_curves_csv(path, curves: CurveSet) -> None:
    """``t,observed,sim_1,...,sim_k``; a leading ``block`` column for concatenated curves."""
    multi = len(curves.blocks) > 1
    header = (["block"] if multi else []) + ["t", "observed"] + [f"sim_{i + 1}" for i in range(curves.n_replicates)]
    labels = np.empty(len(curves.grid), dtype=object)
    for lab, a, b in curves.blocks:
        labels[a:b] = lab
    obs = curves.observed if curves.observed is not None else np.full(len(curves.grid), np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(curves.grid):
            row = ([labels[i]] if multi else []) + [repr(float(t)), repr(float(obs[i]))]
            row += [repr(float(v)) for v in curves.sims[:, i]]
            w.writerow(row)


# ---------------------------------------------------------------------------
# point-pattern summaries


def _unpack(pattern):
    if isinstance(pattern, MarkedPointPattern):
        return pattern.window, pattern.positions
    window, points = pattern
    return window, np.asarray(points, float).reshape(-1, 3)


def default_grid(window: Window, n: int = 128) -> np.ndarray:
    return np.linspace(0.0, 0.25 * window.min_side, n)


def _check_grid(window: Window, grid) -> np.ndarray:
    grid = np.asarray(grid, float).reshape(-1)
    if len(grid) > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid.size and grid.max() > 0.5 * window.min_side:
        raise ValueError("grid exceeds half the shortest window side")
    if len(grid) < MIN_GRID:
        warnings.warn(f"grid has {len(grid)} points (< {MIN_GRID})", GridTooCoarse, stacklevel=3)
    return grid


def _ecdf(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    v = np.sort(values)
    return np.searchsorted(v, grid, side="right") / len(v)


def k_values(window: Window, points: np.ndarray, grid) -> np.ndarray:
    """``|W| / (m (m-1)) * #{ordered pairs i != j with distance <= t}``."""
    m = len(points)
    grid = np.asarray(grid, float)
    if m < 2:
        raise InvalidPattern("K function needs at least two points")
    tree = window.tree(points)
    pairs = tree.sparse_distance_matrix(tree, float(grid.max()), output_type="ndarray")
    d = pairs["v"][pairs["i"] != pairs["j"]]
    counts = np.searchsorted(np.sort(d), grid, side="right")
    return window.volume * counts / (m * (m - 1.0))


def l_values(window: Window, points: np.ndarray, grid) -> np.ndarray:
    return np.cbrt(3.0 * k_values(window, points, grid) / (4.0 * math.pi))


def f_values(window: Window, points: np.ndarray, grid, lattice: int = F_LATTICE) -> np.ndarray:
    """Empty-space function from a ``lattice^3`` grid of test locations."""
    nodes, _ = window.lattice(lattice, lattice, lattice)
    d, _ = window.tree(points).query(nodes)
    return _ecdf(d, np.asarray(grid, float))


def nn_distances(window: Window, points: np.ndarray) -> np.ndarray:
    d, _ = window.tree(points).query(points, k=2)
    return d[:, 1]


def g_values(window: Window, points: np.ndarray, grid) -> np.ndarray:
    return _ecdf(nn_distances(window, points), np.asarray(grid, float))


def l_function(pattern, grid=None) -> CurveSet:
    window, pts = _unpack(pattern)
    grid = _check_grid(window, default_grid(window) if grid is None else grid)
    return CurveSet("L", grid, l_values(window, pts, grid))


def f_function(pattern, grid=None, lattice: int = F_LATTICE) -> CurveSet:
    window, pts = _unpack(pattern)
    if len(pts) == 0:
        raise InvalidPattern("F function needs a nonempty pattern")
    grid = _check_grid(window, default_grid(window) if grid is None else grid)
    return CurveSet("F", grid, f_values(window, pts, grid, lattice))


def g_function(pattern, grid=None) -> CurveSet:
    window, pts = _unpack(pattern)
    grid = _check_grid(window, default_grid(window) if grid is None else grid)
    if len(pts) < 2:
        warnings.warn("G function undefined for fewer than two points", RuntimeWarning, stacklevel=2)
        return CurveSet("G", np.zeros(0), np.zeros(0))
    return CurveSet("G", grid, g_values(window, pts, grid))


def lfg_values(window: Window, points: np.ndarray, grid, lattice: int = F_LATTICE) -> np.ndarray:
    """``L(t) - t``, ``F``, ``G`` concatenated; the vector used for point-model tests."""
    grid = np.asarray(grid, float)
    return np.concatenate([l_values(window, points, grid) - grid, f_values(window, points, grid, lattice),
                           g_values(window, points, grid)])


def lfg_curves(pattern, grid=None, lattice: int = F_LATTICE) -> CurveSet:
    window, pts = _unpack(pattern)
    grid = _check_grid(window, default_grid(window) if grid is None else grid)
    n = len(grid)
    return CurveSet("LFG", np.concatenate([grid, grid, grid]), lfg_values(window, pts, grid, lattice),
                    blocks=[("L-t", 0, n), ("F", n, 2 * n), ("G", 2 * n, 3 * n)])


# ---------------------------------------------------------------------------
# mark correlation


def default_mark_bandwidth(window: Window, points: np.ndarray) -> float:
    return 0.15 * float(nn_distances(window, points).mean())


class MarkCorrelationKernel:
    """Epanechnikov weights of all unordered pairs at every grid value.

    The weights depend only on the points, so permutation tests reuse them
    for every relabelling of the marks.
    """

    def __init__(self, window: Window, points: np.ndarray, grid, bandwidth: float):
        if not bandwidth > 0:
            raise BandwidthNonpositive(f"bandwidth must be positive, got {bandwidth}")
        if len(points) < 2:
            raise InvalidPattern("mark correlation needs at least two points")
        grid = np.asarray(grid, float)
        tree = window.tree(points)
        pairs = tree.sparse_distance_matrix(tree, float(grid.max() + bandwidth), output_type="ndarray")
        keep = pairs["i"] < pairs["j"]
        self.i = pairs["i"][keep]
        self.j = pairs["j"][keep]
        d = pairs["v"][keep]
        x = (grid[:, None] - d[None, :]) / bandwidth
        self.k = np.where(np.abs(x) < 1.0, 0.75 * (1.0 - x * x) / bandwidth, 0.0)
        self.denominator = self.k.sum(axis=1)
        self.grid = grid
        self.bandwidth = bandwidth

    def values(self, marks: np.ndarray) -> np.ndarray:
        marks = np.asarray(marks, float)
        if np.all(marks == marks[0]):
            return np.ones(len(self.grid))
        num = self.k @ (marks[self.i] * marks[self.j])
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / self.denominator / marks.mean() ** 2


def mark_correlation(pattern: MarkedPointPattern, grid=None, bandwidth: float = None) -> CurveSet:
    """Kernel estimate of ``E[r_i r_j | distance t] / mean(r)^2`` (NaN where no pair is near ``t``)."""
    window, pts = pattern.window, pattern.positions
    grid = _check_grid(window, default_grid(window) if grid is None else grid)
    if bandwidth is None:
        bandwidth = default_mark_bandwidth(window, pts)
    kern = MarkCorrelationKernel(window, pts, grid, bandwidth)
    return CurveSet("kmm", grid, kern.values(pattern.radii))


# ---------------------------------------------------------------------------
# kernel densities and moments


def silverman_bandwidth(values) -> float:
    x = np.asarray(values, float)
    sd = x.std(ddof=1) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.349) if q75 > q25 else sd
    h = 0.9 * spread * len(x) ** (-0.2)
    if not h > 0:
        # constant sample: a narrow spike relative to the value's magnitude
        h = 1e-3 * max(abs(float(x[0])), 1.0)
    return float(h)


def density_grid(values, n: int = 512, bandwidth: float = None) -> np.ndarray:
    x = np.asarray(values, float)
    h = silverman_bandwidth(x) if bandwidth is None else bandwidth
    return np.linspace(x.min() - 4 * h, x.max() + 4 * h, n)


def kde_values(values, grid, bandwidth: float) -> np.ndarray:
    x = np.asarray(values, float)
    z = (np.asarray(grid, float)[:, None] - x[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * bandwidth * math.sqrt(2 * math.pi))


def characteristic_density(values, grid=None, bandwidth: float = None, label: str = "density") -> CurveSet:
    """Gaussian kernel density estimate, Silverman bandwidth unless given."""
    x = np.asarray(values, float).reshape(-1)
    if len(x) < 2:
        raise InvalidPattern("density estimate needs at least two values")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(x)
    elif not bandwidth > 0:
        raise BandwidthNonpositive(f"bandwidth must be positive, got {bandwidth}")
    if grid is None:
        grid = density_grid(x, bandwidth=bandwidth)
    return CurveSet(label, grid, kde_values(x, grid, bandwidth))


@dataclass(frozen=True)
class DensitySettings:
    """Grid and bandwidth per characteristic, fixed from the observed data."""

    grids: dict
    bandwidths: dict

    @classmethod
    def from_samples(cls, samples: dict, n: int = 128) -> "DensitySettings":
        bw = {k: silverman_bandwidth(samples[k]) for k in CHARACTERISTICS}
        grids = {k: density_grid(samples[k], n, bw[k]) for k in CHARACTERISTICS}
        return cls(grids, bw)

    def values(self, samples: dict) -> np.ndarray:
        return np.concatenate([kde_values(samples[k], self.grids[k], self.bandwidths[k]) for k in CHARACTERISTICS])

    def curves(self, samples: dict) -> CurveSet:
        grid = np.concatenate([self.grids[k] for k in CHARACTERISTICS])
        n = [len(self.grids[k]) for k in CHARACTERISTICS]
        starts = np.cumsum([0] + n)
        blocks = [(k, int(starts[i]), int(starts[i + 1])) for i, k in enumerate(CHARACTERISTICS)]
        return CurveSet("characteristics", grid, self.values(samples), blocks=blocks)


def moment_table(observed: dict, replicates: list) -> list[dict]:
    """Means and standard deviations per characteristic with percent deviations.

    Simulated values are averages of the per-replicate means and sds.  The
    deviation of a simulated value ``s`` from the observed ``o`` is
    ``100 (s - o) / o``.
    """
    if len(replicates) < 1:
        raise ValueError("need at least one replicate")
    rows = []
    for k in CHARACTERISTICS:
        if k not in observed:
            continue
        o = np.asarray(observed[k], float)
        om, osd = float(o.mean()), float(o.std(ddof=1))
        sm = float(np.mean([np.mean(r[k]) for r in replicates]))
        ssd = float(np.mean([np.std(r[k], ddof=1) for r in replicates]))
        rows.append({
            "characteristic": k,
            "data_mean": om,
            "data_sd": osd,
            "sim_mean": sm,
            "sim_sd": ssd,
            "mean_deviation_pct": 100.0 * (sm - om) / om if om else float("nan"),
            "sd_deviation_pct": 100.0 * (ssd - osd) / osd if osd else float("nan"),
        })
    return rows


def octant_labels(window: Window, positions: np.ndarray) -> np.ndarray:
    """Index 0..7 of the half-side subdivision box containing each position."""
    half = window.sides / 2.0
    b = (np.asarray(positions) >= half).astype(int)
    return b[:, 0] * 4 + b[:, 1] * 2 + b[:, 2]


def octant_radii_densities(pattern: MarkedPointPattern, grid=None, bandwidth: float = None) -> dict:
    """Radii densities per octant of the window, on a shared grid and bandwidth."""
    r = pattern.radii
    if bandwidth is None:
        bandwidth = silverman_bandwidth(r)
    if grid is None:
        grid = np.linspace(0.0, pattern.r_max, 256)
    lab = octant_labels(pattern.window, pattern.positions)
    out = {}
    for o in range(8):
        name = f"x{o >> 2}y{(o >> 1) & 1}z{o & 1}"
        sel = r[lab == o]
        if len(sel) < 2:
            warnings.warn(f"octant {name} has {len(sel)} generators; density skipped", RuntimeWarning, stacklevel=2)
            continue
        out[name] = characteristic_density(sel, grid, bandwidth, label=f"radii_{name}")
    return out
