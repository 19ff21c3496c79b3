"""Global rank envelopes and the area rank envelope test.

All ``s = k + 1`` curves (observed first, then ``k`` simulations) are ranked
pointwise in both directions.  The extreme rank of a curve is the minimum of
its two-sided pointwise ranks over the grid.  The area measure refines ties
in the extreme rank with continuous pointwise ranks:

    A_i = mean_r min(c_i(r), R_i)

where ``c_i(r)`` interpolates between integer ranks by the gaps to the
neighbouring values.  Small measures are extreme.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ReplicateCountMismatch, TooFewReplicates
from .summaries import CurveSet


def concat_curves(curves: list, scale: str = None) -> CurveSet:
    """Join curve sets into one long vector, recording block boundaries.

    ``scale="studentize"`` divides every block by the pointwise standard
    deviation of its simulations (points with zero spread are left as is).
    """
    if not curves:
        raise ValueError("nothing to concatenate")
    if len(curves) == 1 and scale is None:
        return curves[0]
    k = {c.n_replicates for c in curves}
    if len(k) != 1:
        raise ReplicateCountMismatch(f"replicate counts differ: {sorted(k)}")
    has_obs = {c.observed is not None for c in curves}
    if len(has_obs) != 1:
        raise ReplicateCountMismatch("observed curve present in some blocks only")
    grids, obs, sims, blocks = [], [], [], []
    start = 0
    for c in curves:
        o = c.observed
        sm = c.sims
        if scale == "studentize":
            sd = sm.std(axis=0, ddof=1) if len(sm) > 1 else np.ones(len(c.grid))
            sd = np.where(sd > 0, sd, 1.0)
            o = None if o is None else o / sd
            sm = sm / sd
        elif scale is not None:
            raise ValueError(f"unknown scaling {scale!r}")
        grids.append(c.grid)
        obs.append(o)
        sims.append(sm)
        for lab, a, b in c.blocks:
            blocks.append((lab, start + a, start + b))
        start += len(c.grid)
    label = "+".join(c.label for c in curves)
    observed = None if obs[0] is None else np.concatenate(obs)
    return CurveSet(label, np.concatenate(grids), observed, np.hstack(sims), blocks)


def pointwise_ranks(T: np.ndarray) -> np.ndarray:
    """Two-sided integer ranks ``min(#{T_j <= T_i}, #{T_j >= T_i})`` per grid point."""
    s = T.shape[0]
    asc = rankdata(T, method="max", axis=0)  # #{j : T_j <= T_i}
    desc = s + 1 - rankdata(T, method="min", axis=0)  # #{j : T_j >= T_i}
    return np.minimum(asc, desc)


def _continuous_low(T: np.ndarray) -> np.ndarray:
    """Continuous ranks from below; the smallest value gets a rank in (0, 1]."""
    s = T.shape[0]
    order = np.argsort(T, axis=0, kind="stable")
    v = np.take_along_axis(T, order, axis=0)
    c = np.empty_like(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = v[1] - v[0]
        b = v[2] - v[1] if s > 2 else np.zeros_like(a)
        # a zero gap above the second value makes the minimum infinitely extreme
        ratio = np.where(a == 0, 0.0, np.where(b > 0, a / b, np.inf))
        c[0] = np.exp(-ratio)
        lo, hi = v[:-2], v[2:]
        gap = hi - lo
        frac = np.where(gap > 0, (v[1:-1] - lo) / gap, 0.5)
        c[1:-1] = np.arange(1, s - 1)[:, None] + frac
        c[-1] = s
    # equal values share the smallest continuous rank among them
    for r in range(1, s):
        tie = v[r] == v[r - 1]
        c[r] = np.where(tie, c[r - 1], c[r])
    out = np.empty_like(c)
    np.put_along_axis(out, order, c, axis=0)
    return out


def continuous_ranks(T: np.ndarray) -> np.ndarray:
    return np.minimum(_continuous_low(T), _continuous_low(-T))


@dataclass
class EnvelopeResult:
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    observed: np.ndarray
    mean: np.ndarray
    p_lower: float
    p_upper: float
    alpha: float
    measure: str
    n_sims: int
    blocks: list = field(default_factory=list)
    measures: np.ndarray = field(default=None, repr=False)

    @property
    def p_value(self) -> float:
        """Conservative end of the p-interval, used for decisions."""
        return self.p_upper

    @property
    def rejected(self) -> bool:
        return self.p_upper < self.alpha

    def outside(self) -> np.ndarray:
        return (self.observed < self.lower) | (self.observed > self.upper)

    def outside_intervals(self) -> list:
        """Grid spans (per block) where the observed curve leaves the envelope."""
        out = []
        mask = self.outside()
        for lab, a, b in self.blocks:
            m = mask[a:b]
            g = self.grid[a:b]
            i = 0
            while i < len(m):
                if m[i]:
                    j = i
                    while j + 1 < len(m) and m[j + 1]:
                        j += 1
                    out.append({"block": lab, "from": float(g[i]), "to": float(g[j])})
                    i = j + 1
                else:
                    i += 1
        return out

    def to_dict(self) -> dict:
        return {
            "measure": self.measure,
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
            "alpha": self.alpha,
            "n_sims": self.n_sims,
            "rejected": self.rejected,
            "outside_intervals": self.outside_intervals(),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        import csv

        multi = len(self.blocks) > 1
        labels = np.empty(len(self.grid), dtype=object)
        for lab, a, b in self.blocks:
            labels[a:b] = lab
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow((["block"] if multi else []) + ["t", "lo", "hi", "observed", "mean"])
            for i in range(len(self.grid)):
                w.writerow(([labels[i]] if multi else []) + [repr(float(x)) for x in (
                    self.grid[i], self.lower[i], self.upper[i], self.observed[i], self.mean[i])])


def area_rank_envelope(curves: CurveSet, alpha: float = 0.05, measure: str = "area") -> EnvelopeResult:
    """Global envelope test of ``curves.observed`` against ``curves.sims``.

    ``measure="area"`` gives the area rank test; ``measure="rank"`` the
    extreme rank test with its p-interval.  Both report
    ``p_upper = #{M_j <= M_obs} / s`` and ``p_lower = (#{M_j < M_obs} + 1) / s``.
    """
    if curves.observed is None:
        raise ValueError("curve set has no observed curve")
    k = curves.n_replicates
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if k + 1 < math.ceil(1.0 / alpha) or k < 2:
        raise TooFewReplicates(f"{k} replicates are too few for alpha={alpha}")
    T = np.vstack([curves.observed[None, :], curves.sims])
    s = T.shape[0]
    R = pointwise_ranks(T).min(axis=1).astype(float)
    if measure == "area":
        c = continuous_ranks(T)
        M = np.minimum(c, R[:, None]).mean(axis=1)
    elif measure == "rank":
        M = R
    else:
        raise ValueError(f"unknown measure {measure!r}")
    m_obs = M[0]
    p_upper = float(np.count_nonzero(M <= m_obs)) / s
    p_lower = float(np.count_nonzero(M < m_obs) + 1) / s
    if measure == "rank":
        # largest k with #{R_i < k} <= alpha * s; the band between the k-th
        # smallest and k-th largest values contains exactly the curves with R_i >= k
        k_alpha = 1
        while k_alpha < s and np.count_nonzero(M < k_alpha + 1) <= alpha * s:
            k_alpha += 1
        srt = np.sort(T, axis=0)
        lower, upper = srt[k_alpha - 1], srt[s - k_alpha]
    else:
        crit = np.sort(M)[int(math.floor(alpha * s))]
        sims = T[1:][M[1:] >= crit]
        if len(sims) == 0:
            sims = T[1:]
        lower, upper = sims.min(axis=0), sims.max(axis=0)
    return EnvelopeResult(curves.grid, lower, upper, curves.observed, curves.sims.mean(axis=0),
                          p_lower, p_upper, alpha, measure, k, list(curves.blocks), M)


def permutation_mark_test(pattern, n_perm: int = 999, alpha: float = 0.05, rng_seed=None, grid=None,
                          bandwidth: float = None, measure: str = "area") -> EnvelopeResult:
    """Test independence of marks and points by permuting the radii.

    Grid values with no pair within the kernel window carry no information
    and are dropped.
    """
    from .summaries import MarkCorrelationKernel, _check_grid, default_grid, default_mark_bandwidth

    if n_perm < 99:
        raise TooFewReplicates("need at least 99 permutations")
    window, pts, marks = pattern.window, pattern.positions, pattern.radii
    grid = _check_grid(window, default_grid(window) if grid is None else grid)
    if bandwidth is None:
        bandwidth = default_mark_bandwidth(window, pts)
    kern = MarkCorrelationKernel(window, pts, grid, bandwidth)
    keep = kern.denominator > 0
    rng = np.random.default_rng(rng_seed)
    obs = kern.values(marks)[keep]
    sims = np.array([kern.values(rng.permutation(marks))[keep] for _ in range(n_perm)])
    return area_rank_envelope(CurveSet("kmm", grid[keep], obs, sims), alpha, measure)
