"""Multiscale pairwise-interaction point processes on the torus.

The density with respect to the unit-rate Poisson process is proportional to

    beta^m * prod_i gamma_i^(number of pairs with distance in (delta_{i-1}, delta_i])

with ``delta_0 = 0`` and ``0^0 = 1``.  ``d = 1`` is the Poisson process and
``d = 2`` the Strauss process.  Simulation is by birth-death-move
Metropolis-Hastings, estimation by profile maximum pseudolikelihood with a
midpoint-rule lattice for the integral of the conditional intensity.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidPattern, NewtonDivergence, NonFiniteValue
from .pattern import MarkedPointPattern, Window

log = logging.getLogger(__name__)

DEFAULT_LATTICE = (64, 64, 128)
DEFAULT_DELTA_VALUES = tuple(np.round(np.arange(1, 21) * 0.25, 10))


@dataclass(frozen=True)
class MultiscaleParams:
    beta: float
    gammas: tuple = ()
    deltas: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "deltas", tuple(float(x) for x in self.deltas))
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if len(self.gammas) != len(self.deltas):
            raise ValueError("need one delta per gamma")
        if any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise ValueError(f"gammas must lie in [0, 1]: {self.gammas}")
        if any(x <= 0 for x in self.deltas) or any(b <= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ValueError(f"deltas must be positive and strictly increasing: {self.deltas}")

    @property
    def d(self) -> int:
        return len(self.gammas) + 1

    @property
    def theta(self) -> np.ndarray:
        """Canonical parameter ``(log beta, log gamma_1, ...)``."""
        with np.errstate(divide="ignore"):
            return np.log(np.array([self.beta, *self.gammas]))

    @classmethod
    def from_theta(cls, theta, deltas) -> "MultiscaleParams":
        g = np.minimum(np.exp(theta[1:]), 1.0)
        return cls(float(np.exp(theta[0])), tuple(g), tuple(deltas))

    @classmethod
    def poisson(cls, beta: float) -> "MultiscaleParams":
        return cls(beta)

    def to_dict(self) -> dict:
        return {"d": self.d, "beta": self.beta, "gammas": list(self.gammas), "deltas": list(self.deltas)}

    @classmethod
    def from_dict(cls, data: dict) -> "MultiscaleParams":
        return cls(float(data["beta"]), tuple(data.get("gammas", ())), tuple(data.get("deltas", ())))


# ---------------------------------------------------------------------------
# pair counts


def _band_counts(window: Window, points: np.ndarray, locations: np.ndarray, edges, exclude_zero: bool = True):
    """Counts of ``points`` at torus distance in ``(edges[k-1], edges[k]]`` from each location.

    Returns an integer array of shape ``(len(locations), len(edges))``.
    Points at distance zero (the location itself) are never counted.
    """
    edges = np.asarray(edges, float)
    out = np.zeros((len(locations), len(edges)), dtype=np.int64)
    if len(points) == 0 or len(locations) == 0 or len(edges) == 0:
        return out
    tp = window.tree(points)
    tl = window.tree(locations)
    chunk = 200_000
    rmax = float(edges[-1])
    if len(locations) <= chunk:
        parts = [(0, tl)]
    else:
        parts = [(s, window.tree(locations[s : s + chunk])) for s in range(0, len(locations), chunk)]
    for start, tree in parts:
        m = tree.sparse_distance_matrix(tp, rmax, output_type="ndarray")
        if len(m) == 0:
            continue
        dist = m["v"]
        keep = dist > 1e-12 if exclude_zero else np.ones(len(dist), bool)
        loc = m["i"][keep] + start
        band = np.searchsorted(edges, dist[keep], side="left")
        ok = band < len(edges)
        np.add.at(out, (loc[ok], band[ok]), 1)
    return out


def _interaction_counts(params: MultiscaleParams, window: Window, points: np.ndarray, u: np.ndarray) -> np.ndarray:
    return _band_counts(window, points, np.atleast_2d(u), params.deltas)


def papangelou(params: MultiscaleParams, pattern, u) -> float | np.ndarray:
    """Conditional intensity of adding ``u`` (one location or an array of them)."""
    window, points = _unpack(pattern)
    u = np.asarray(u, float)
    single = u.ndim == 1
    if params.d == 1:
        lam = np.full(1 if single else len(u), params.beta)
    else:
        t = _interaction_counts(params, window, points, u)
        g = np.array(params.gammas)
        lam = params.beta * np.prod(np.where(t == 0, 1.0, g[None, :] ** t), axis=1)
    return float(lam[0]) if single else lam


def log_unnormalized_density(params: MultiscaleParams, pattern) -> float:
    window, points = _unpack(pattern)
    m = len(points)
    val = m * math.log(params.beta)
    if params.d > 1 and m > 1:
        s = pair_band_counts(window, points, params.deltas)
        for g, c in zip(params.gammas, s):
            if c:
                val += -math.inf if g == 0 else c * math.log(g)
    return val


def pair_band_counts(window: Window, points: np.ndarray, deltas) -> np.ndarray:
    """Number of unordered pairs with distance in each band ``(delta_{i-1}, delta_i]``."""
    if len(deltas) == 0:
        return np.zeros(0, dtype=np.int64)
    return _band_counts(window, points, points, deltas).sum(axis=0) // 2


def _unpack(pattern):
    if isinstance(pattern, MarkedPointPattern):
        return pattern.window, pattern.positions
    window, points = pattern
    return window, np.asarray(points, float).reshape(-1, 3)


# ---------------------------------------------------------------------------
# pseudolikelihood


@dataclass
class PointsPLData:
    """Sufficient quantities for the log pseudolikelihood on a fixed band partition.

    ``node_counts`` holds, per lattice node, counts in the elementary bands
    ``(edges[k-1], edges[k]]``; ``data_counts`` the same summed over the data
    points (each pair therefore twice).
    """

    window: Window
    m: int
    edges: np.ndarray
    node_counts: np.ndarray
    node_volume: float
    data_counts: np.ndarray
    lattice: tuple

    @classmethod
    def build(cls, pattern, edges, lattice=DEFAULT_LATTICE) -> "PointsPLData":
        window, points = _unpack(pattern)
        edges = np.asarray(sorted(set(float(e) for e in edges)), float)
        nodes, dv = window.lattice(*lattice)
        nc = _band_counts(window, points, nodes, edges)
        dc = _band_counts(window, points, points, edges).sum(axis=0)
        return cls(window, len(points), edges, nc, dv, dc, tuple(lattice))

    def design(self, deltas):
        """Band statistics for one delta tuple: unique node rows, node weights, data totals."""
        if len(deltas) == 0:
            return np.zeros((1, 0), np.int64), np.array([self.node_volume * len(self.node_counts)]), np.zeros(0)
        idx = [int(np.flatnonzero(np.isclose(self.edges, d, rtol=0, atol=1e-9))[0]) for d in deltas]
        cum = np.cumsum(self.node_counts, axis=1)
        dcum = np.cumsum(self.data_counts)
        cols = cum[:, idx]
        t = np.diff(np.concatenate([np.zeros((len(cols), 1), np.int64), cols], axis=1), axis=1)
        dcols = dcum[idx]
        n_band = np.diff(np.concatenate([[0], dcols]))
        rows, mult = np.unique(t, axis=0, return_counts=True)
        return rows, mult * self.node_volume, n_band.astype(float)


@dataclass
class PLValue:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _pl_eval(theta, rows, wts, m, n_band, volume, fixed_zero=()):
    """Log PL, gradient and Hessian on the free coordinates.

    ``fixed_zero`` lists interaction bands with gamma = 0: nodes with a
    positive count there contribute nothing, and the band is dropped from
    the parameter vector.
    """
    theta = np.asarray(theta, float)
    keep = np.ones(len(rows), bool)
    for i in fixed_zero:
        keep &= rows[:, i] == 0
    free = [i for i in range(rows.shape[1]) if i not in fixed_zero]
    X = np.column_stack([np.ones(keep.sum()), rows[keep][:, free]]).astype(float)
    th = np.concatenate([[theta[0]], theta[1:][free]]) if len(theta) > 1 else theta
    lam = wts[keep] * np.exp(X @ th)
    integral = lam.sum()
    nb = np.concatenate([[m], n_band[free]])
    value = volume - integral + float(nb @ th)
    grad = nb - X.T @ lam
    hess = -(X.T * lam) @ X
    return value, grad, hess


def log_pseudolikelihood_points(params: MultiscaleParams, pattern, lattice=DEFAULT_LATTICE, data: PointsPLData = None) -> PLValue:
    """Log pseudolikelihood with gradient and Hessian in ``(log beta, log gamma_i)``."""
    window, points = _unpack(pattern)
    if len(points) == 0:
        raise InvalidPattern("pseudolikelihood needs a nonempty pattern")
    if data is None:
        data = PointsPLData.build((window, points), params.deltas, lattice)
    rows, wts, n_band = data.design(params.deltas)
    zero = [i for i, g in enumerate(params.gammas) if g == 0.0]
    for i in zero:
        if n_band[i] > 0:
            raise NonFiniteValue(f"gamma_{i + 1} = 0 but the pattern has pairs in band {i + 1}")
    theta = params.theta
    value, g, h = _pl_eval(theta, rows, wts, data.m, n_band, window.volume, zero)
    if zero:
        free = [0] + [i + 1 for i in range(len(params.gammas)) if i not in zero]
        G = np.full(len(theta), np.nan)
        H = np.full((len(theta), len(theta)), np.nan)
        G[free] = g
        H[np.ix_(free, free)] = h
        g, h = G, H
    return PLValue(float(value), g, h)


@dataclass
class PointsFit:
    params: MultiscaleParams
    log_pl: float
    iterations: int
    boundary: tuple = ()
    grid_table: list = field(default_factory=list)

    @property
    def effective_order(self) -> int:
        """Model order after discarding inactive scales (gamma = 1)."""
        return 1 + sum(1 for g in self.params.gammas if g < 1.0)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "logPL": self.log_pl,
            "iterations": self.iterations,
            "boundary": list(self.boundary),
            "effective_order": self.effective_order,
            "grid_table": self.grid_table,
        }


def _newton_points(rows, wts, m, n_band, volume, tol=1e-8, max_iter=100):
    """Maximise over ``theta`` with ``theta_i <= 0`` (gamma <= 1).

    Bands without observed pairs are hard-core boundaries: gamma = 0.
    """
    k = rows.shape[1]
    zero = tuple(i for i in range(k) if n_band[i] == 0 and np.any(rows[:, i] > 0))
    free = [i for i in range(k) if i not in zero]
    theta = np.zeros(1 + len(free))
    theta[0] = math.log(max(m, 1) / volume)

    def full(t):
        out = np.zeros(1 + k)
        out[0] = t[0]
        out[1:][free] = t[1:]
        return out

    def ev(t):
        return _pl_eval(full(t), rows, wts, m, n_band, volume, zero)

    val, g, h = ev(theta)
    for it in range(1, max_iter + 1):
        at_bound = np.zeros(len(theta), bool)
        at_bound[1:] = (theta[1:] >= 0) & (g[1:] > 0)
        pg = np.where(at_bound, 0.0, g)
        if np.linalg.norm(pg) < tol:
            return full(theta), val, it - 1, zero
        act = ~at_bound
        H = h[np.ix_(act, act)]
        try:
            step_a = np.linalg.solve(-H, g[act])
        except np.linalg.LinAlgError:
            step_a = np.linalg.lstsq(-H, g[act], rcond=None)[0]
        step = np.zeros(len(theta))
        step[act] = step_a
        alpha = 1.0
        for _ in range(60):
            cand = theta + alpha * step
            cand[1:] = np.minimum(cand[1:], 0.0)
            cval, cg, ch = ev(cand)
            if np.isfinite(cval) and cval >= val - 1e-12 * abs(val):
                break
            alpha /= 2
        else:
            raise NewtonDivergence("step halving failed to increase the log pseudolikelihood")
        theta, val, g, h = cand, cval, cg, ch
    pg = np.where((theta >= 0) & (g > 0) & (np.arange(len(theta)) > 0), 0.0, g)
    if np.linalg.norm(pg) < tol:
        return full(theta), val, max_iter, zero
    raise NewtonDivergence(f"no convergence after {max_iter} iterations (|grad| = {np.linalg.norm(pg):.3g})")


def fit_deltas(data: PointsPLData, deltas, tol=1e-8, max_iter=100) -> PointsFit:
    rows, wts, n_band = data.design(deltas)
    theta, val, it, zero = _newton_points(rows, wts, data.m, n_band, data.window.volume, tol, max_iter)
    g = np.exp(theta[1:])
    g[list(zero)] = 0.0
    params = MultiscaleParams(float(np.exp(theta[0])), tuple(np.minimum(g, 1.0)), tuple(deltas))
    return PointsFit(params, float(val), it, tuple(i + 1 for i in zero))


def delta_tuples(values, d: int):
    """All strictly increasing ``(d-1)``-tuples drawn from ``values``."""
    vals = sorted(set(float(v) for v in values))
    return [tuple(c) for c in itertools.combinations(vals, d - 1)]


def fit_mple_points(pattern, d: int, delta_grid=None, lattice=DEFAULT_LATTICE, tol=1e-8, max_iter=100) -> PointsFit:
    """Profile MPLE: Newton-Raphson per delta tuple, arg-max over the grid.

    ``delta_grid`` is either a list of delta tuples or a flat list of values
    from which all nested tuples are enumerated.
    """
    window, points = _unpack(pattern)
    if len(points) == 0:
        raise InvalidPattern("cannot fit an empty pattern")
    if d < 1:
        raise ValueError("model order d must be >= 1")
    if d == 1:
        data = PointsPLData.build((window, points), [], lattice)
        fit = fit_deltas(data, ())
        fit.grid_table = [{"deltas": [], **_row(fit)}]
        return fit
    if delta_grid is None:
        delta_grid = DEFAULT_DELTA_VALUES
    grid = list(delta_grid)
    if grid and np.ndim(grid[0]) == 0:
        tuples = delta_tuples(grid, d)
    else:
        tuples = [tuple(float(x) for x in t) for t in grid]
    tuples = [t for t in tuples if len(t) == d - 1]
    if not tuples:
        raise ValueError(f"delta grid has no admissible tuple for d={d}")
    edges = sorted(set(x for t in tuples for x in t))
    data = PointsPLData.build((window, points), edges, lattice)
    best = None
    table = []
    for t in tuples:
        try:
            fit = fit_deltas(data, t, tol, max_iter)
        except NewtonDivergence as exc:
            warnings.warn(f"delta={t}: {exc}; grid cell skipped", RuntimeWarning, stacklevel=2)
            table.append({"deltas": list(t), "status": "diverged"})
            continue
        table.append({"deltas": list(t), **_row(fit)})
        if best is None or fit.log_pl > best.log_pl:
            best = fit
    if best is None:
        raise NewtonDivergence("Newton-Raphson diverged on every delta tuple")
    best.grid_table = table
    return best


def _row(fit: PointsFit) -> dict:
    return {"beta": fit.params.beta, "gammas": list(fit.params.gammas), "logPL": fit.log_pl,
            "iterations": fit.iterations, "boundary": list(fit.boundary), "status": "ok"}


# ---------------------------------------------------------------------------
# birth-death-move Metropolis-Hastings


@njit(cache=True)
def _lambda_star(pts, n, skip, u, sides, beta, gammas, deltas):
    k = len(deltas)
    if k == 0:
        return beta
    counts = np.zeros(k, dtype=np.int64)
    dmax2 = deltas[k - 1] * deltas[k - 1]
    for j in range(n):
        if j == skip:
            continue
        d2 = 0.0
        for a in range(3):
            x = u[a] - pts[j, a]
            x -= sides[a] * np.floor(x / sides[a] + 0.5)
            d2 += x * x
        if d2 <= dmax2 and d2 > 0.0:
            for b in range(k):
                if d2 <= deltas[b] * deltas[b]:
                    counts[b] += 1
                    break
    lam = beta
    for b in range(k):
        if counts[b] > 0:
            if gammas[b] == 0.0:
                return 0.0
            lam *= gammas[b] ** counts[b]
    return lam


@njit(cache=True)
def _bdm_chunk(pts, n, sides, beta, gammas, deltas, kind, unif3, pick, gauss, acc, move_sd, stats, trace, t0):
    vol = sides[0] * sides[1] * sides[2]
    cap = pts.shape[0]
    u = np.empty(3)
    for s in range(len(kind)):
        k = kind[s]
        if k == 0:
            stats[0, 0] += 1
            if n >= cap:
                return n, s
            for a in range(3):
                u[a] = unif3[s, a] * sides[a]
            lam = _lambda_star(pts, n, -1, u, sides, beta, gammas, deltas)
            if acc[s] * (n + 1) < lam * vol:
                for a in range(3):
                    pts[n, a] = u[a]
                n += 1
                stats[0, 1] += 1
        elif k == 1:
            stats[1, 0] += 1
            if n > 0:
                i = min(int(pick[s] * n), n - 1)
                lam = _lambda_star(pts, n, i, pts[i], sides, beta, gammas, deltas)
                if acc[s] * lam * vol < n:
                    for a in range(3):
                        pts[i, a] = pts[n - 1, a]
                    n -= 1
                    stats[1, 1] += 1
        else:
            stats[2, 0] += 1
            if n > 0:
                i = min(int(pick[s] * n), n - 1)
                for a in range(3):
                    x = pts[i, a] + move_sd * gauss[s, a]
                    x -= sides[a] * np.floor(x / sides[a])
                    if x >= sides[a]:
                        x -= sides[a]
                    u[a] = x
                new = _lambda_star(pts, n, i, u, sides, beta, gammas, deltas)
                old = _lambda_star(pts, n, i, pts[i], sides, beta, gammas, deltas)
                if acc[s] * old < new:
                    for a in range(3):
                        pts[i, a] = u[a]
                    stats[2, 1] += 1
        trace[t0 + s] = n
    return n, len(kind)


@dataclass
class BDMDiagnostics:
    proposed: dict
    accepted: dict
    count_trace: np.ndarray
    burn_in: int

    @property
    def acceptance(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan")) for k in self.proposed}

    def to_dict(self) -> dict:
        tr = self.count_trace
        return {"proposed": self.proposed, "accepted": self.accepted, "acceptance": self.acceptance,
                "burn_in": self.burn_in, "mean_count": float(tr.mean()) if len(tr) else float("nan"),
                "final_count": int(tr[-1]) if len(tr) else None}


def _feasible_start(params: MultiscaleParams, window: Window, pts: np.ndarray) -> np.ndarray:
    """Greedily drop points until the state has positive density."""
    if 0.0 not in params.gammas:
        return pts
    g = np.array(params.gammas)
    d = np.array(params.deltas)
    sides = window.sides
    kept = np.empty_like(pts)
    n = 0
    for p in pts:
        if _lambda_star(kept, n, -1, p, sides, params.beta, g, d) > 0:
            kept[n] = p
            n += 1
    return kept[:n].copy()


def simulate_bdm(
    params: MultiscaleParams,
    window: Window,
    n_steps: int,
    rng_seed=None,
    initial=None,
    burn_in: int = 100_000,
    move_sd: float = 0.5,
    chunk: int = 200_000,
):
    """Run ``burn_in + n_steps`` birth-death-move steps.

    Birth, death and move are proposed with probability 1/3 each.  Returns
    the final point array and diagnostics for the post-burn-in steps.
    Proposals into zero-density states have acceptance probability zero.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(rng_seed)
    sides = window.sides
    if initial is None:
        n0 = int(math.ceil(params.beta * window.volume))
        start = rng.random((n0, 3)) * sides
    else:
        start = np.asarray(initial.positions if isinstance(initial, MarkedPointPattern) else initial, float).reshape(-1, 3)
    start = _feasible_start(params, window, start)
    cap = max(64, 2 * len(start), int(4 * params.beta * window.volume) + 16)
    pts = np.empty((cap, 3))
    pts[: len(start)] = start
    n = len(start)
    gam = np.array(params.gammas, float)
    dl = np.array(params.deltas, float)
    total = burn_in + n_steps
    trace = np.empty(total, dtype=np.int64)
    stats = np.zeros((3, 2), dtype=np.int64)
    done = 0
    while done < total:
        c = min(chunk, total - done)
        kind = rng.integers(0, 3, c)
        unif3 = rng.random((c, 3))
        pick = rng.random(c)
        gauss = rng.standard_normal((c, 3))
        acc = rng.random(c)
        pos = 0
        while pos < c:
            n, s = _bdm_chunk(pts, n, sides, params.beta, gam, dl, kind[pos:], unif3[pos:], pick[pos:],
                              gauss[pos:], acc[pos:], move_sd, stats, trace, done + pos)
            pos += s
            if pos < c:
                bigger = np.empty((2 * len(pts), 3))
                bigger[:n] = pts[:n]
                pts = bigger
        done += c
    # stats accumulate over the whole run; recount after burn-in from the trace is not possible,
    # so report totals together with the burn-in length
    names = ("birth", "death", "move")
    diag = BDMDiagnostics(
        {k: int(stats[i, 0]) for i, k in enumerate(names)},
        {k: int(stats[i, 1]) for i, k in enumerate(names)},
        trace[burn_in:].copy(),
        burn_in,
    )
    return pts[:n].copy(), diag


def simulate_pattern(params, window, n_steps, rng_seed=None, burn_in=100_000, move_sd=0.5, r_max=6.0):
    pts, diag = simulate_bdm(params, window, n_steps, rng_seed, burn_in=burn_in, move_sd=move_sd)
    return MarkedPointPattern(window, window.wrap(pts), np.zeros(len(pts)), r_max, validate=False), diag
