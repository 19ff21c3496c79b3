"""Exponential-family model for radii given generator positions.

The conditional density of the radii ``t`` given points ``y`` is proportional
to ``1{all cells nonempty} * exp(theta . H(y, t))`` on ``[0, r_max]^m``.
Available statistics:

* ``LogRadius`` and ``LogOneMinusRadius``: ``sum log(t_j / r_max)`` and
  ``sum log(1 - t_j / r_max)``; together they give a scaled beta law for
  isolated generators.
* ``SumNof``: sum of face counts over cells (each face counted twice).
* ``SumSurf``: sum of cell surface areas (each face counted twice).
* ``SumVolSq``: sum of squared cell volumes.
* ``SumDvol``: sum of ``|vol_i - vol_j|`` over unordered pairs of adjacent cells.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    Infeasible,
    InfeasibleInitial,
    InvalidPattern,
    NewtonDivergence,
    NonFiniteValue,
    QuadratureAllInfeasible,
)
from .pattern import MarkedPointPattern
from .tessellation import PeriodicTessellation, apply_trial, build_tessellation, trial_cells

log = logging.getLogger(__name__)

KINDS = ("LogRadius", "LogOneMinusRadius", "SumNof", "SumSurf", "SumVolSq", "SumDvol")
BETA_KINDS = ("LogRadius", "LogOneMinusRadius")
TERM_NAMES = {
    "beta": ("LogRadius", "LogOneMinusRadius"),
    "nof": ("SumNof",),
    "surf": ("SumSurf",),
    "vol2": ("SumVolSq",),
    "dvol": ("SumDvol",),
}
DEFAULT_NODES = 120


@dataclass(frozen=True)
class SufficientStatTerm:
    kind: str
    r_max: float = 6.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown statistic {self.kind!r}; choose from {KINDS}")


def parse_terms(text, r_max: float = 6.0) -> list[SufficientStatTerm]:
    """``"beta,nof,dvol"`` (or a list of names) to an ordered term list."""
    names = [n.strip() for n in (text.split(",") if isinstance(text, str) else text) if n.strip()]
    if not names:
        raise ValueError("empty term list")
    kinds = []
    for n in names:
        if n in TERM_NAMES:
            new = TERM_NAMES[n]
        elif n in KINDS:
            new = (n,)
        else:
            raise ValueError(f"unknown term {n!r}; choose from {sorted(TERM_NAMES)}")
        kinds.extend(k for k in new if k not in kinds)
    return [SufficientStatTerm(k, r_max) for k in kinds]


def term_label(terms) -> str:
    kinds = [t.kind for t in terms]
    out = []
    if "LogRadius" in kinds or "LogOneMinusRadius" in kinds:
        out.append("beta")
    inv = {v[0]: k for k, v in TERM_NAMES.items() if k != "beta"}
    out.extend(inv[k] for k in kinds if k in inv)
    return "+".join(out)


@dataclass
class RadiiModelSpec:
    terms: list
    theta: np.ndarray = None

    def __post_init__(self):
        self.terms = list(self.terms)
        if self.theta is None:
            self.theta = np.zeros(len(self.terms))
        self.theta = np.asarray(self.theta, float).reshape(-1)
        if len(self.theta) != len(self.terms):
            raise ValueError(f"{len(self.terms)} terms but {len(self.theta)} parameters")
        if len({t.kind for t in self.terms}) != len(self.terms):
            raise ValueError("duplicate terms")
        if not self.admissible(self.theta):
            raise ValueError(f"beta-term parameters must exceed -1: {self.theta}")

    @classmethod
    def from_names(cls, names, theta=None, r_max: float = 6.0) -> "RadiiModelSpec":
        return cls(parse_terms(names, r_max), theta)

    @property
    def kinds(self) -> tuple:
        return tuple(t.kind for t in self.terms)

    @property
    def r_max(self) -> float:
        return self.terms[0].r_max if self.terms else 6.0

    @property
    def label(self) -> str:
        return term_label(self.terms)

    @property
    def beta_only(self) -> bool:
        return all(k in BETA_KINDS for k in self.kinds)

    def admissible(self, theta) -> bool:
        theta = np.asarray(theta, float)
        return all(th > -1.0 for k, th in zip(self.kinds, theta) if k in BETA_KINDS)

    def columns(self) -> list[int]:
        return [KINDS.index(k) for k in self.kinds]

    def to_dict(self) -> dict:
        return {"terms": list(self.kinds), "label": self.label, "theta": [float(x) for x in self.theta]}

    @classmethod
    def from_dict(cls, data: dict, r_max: float = 6.0) -> "RadiiModelSpec":
        return cls([SufficientStatTerm(k, r_max) for k in data["terms"]], data.get("theta"))


# ---------------------------------------------------------------------------
# statistics


def _radius_terms(t, r_max):
    with np.errstate(divide="ignore"):
        x = np.asarray(t, float) / r_max
        return np.log(x), np.log1p(-x)


def all_stats(tess: PeriodicTessellation) -> np.ndarray:
    """All six statistics in ``KINDS`` order for a feasible tessellation."""
    if not tess.feasible:
        raise Infeasible(f"empty cells: {sorted(tess.empty)}")
    pat = tess.pattern
    la, lb = _radius_terms(pat.radii, pat.r_max)
    cells = tess.cells
    vols = tess.volumes()
    dvol = sum(abs(vols[i] - vols[j]) for i, j in tess.adjacency)
    return np.array([
        la.sum(),
        lb.sum(),
        float(sum(c.nof for c in cells)),
        float(sum(c.surface for c in cells)),
        float(np.sum(vols**2)),
        float(dvol),
    ])


def sufficient_stats(spec: RadiiModelSpec, tess: PeriodicTessellation) -> np.ndarray:
    return all_stats(tess)[spec.columns()]


def log_unnormalized_density(spec: RadiiModelSpec, pattern) -> float:
    """``theta . H`` on the support, ``-inf`` off it."""
    tess = pattern if isinstance(pattern, PeriodicTessellation) else None
    pat = tess.pattern if tess is not None else pattern
    r = pat.radii
    if np.any(r < 0) or np.any(r > spec.r_max) or not np.all(np.isfinite(r)):
        return -math.inf
    if tess is None:
        tess = build_tessellation(pat)
    if not tess.feasible:
        return -math.inf
    h = sufficient_stats(spec, tess)
    if not np.any(spec.theta):
        return 0.0
    with np.errstate(invalid="ignore"):
        val = float(np.dot(np.where(spec.theta == 0, 0.0, spec.theta), np.where(spec.theta == 0, 0.0, h)))
    return val if not math.isnan(val) else -math.inf


def delta_stats(tess: PeriodicTessellation, index: int, radius: float, trial: dict) -> np.ndarray:
    """``H(new) - H(old)`` in ``KINDS`` order from the recomputed cells only.

    ``trial`` must be a complete ``trial_cells`` result for a feasible change.
    """
    pat = tess.pattern
    old_cells = tess.cells
    la0, lb0 = _radius_terms(pat.radii[index], pat.r_max)
    la1, lb1 = _radius_terms(radius, pat.r_max)
    d_nof = d_surf = d_vsq = 0.0
    for k, c in trial.items():
        o = old_cells[k]
        d_nof += c.nof - o.nof
        d_surf += c.surface - o.surface
        d_vsq += c.volume * c.volume - o.volume * o.volume
    old_pairs = set()
    new_pairs = set()
    for k, c in trial.items():
        for j in old_cells[k].neighbors:
            j = int(j)
            old_pairs.add((min(k, j), max(k, j)))
        for j in c.neighbors:
            j = int(j)
            new_pairs.add((min(k, j), max(k, j)))

    def new_vol(i):
        c = trial.get(i)
        return c.volume if c is not None else old_cells[i].volume

    d_dvol = sum(abs(new_vol(i) - new_vol(j)) for i, j in new_pairs)
    d_dvol -= sum(abs(old_cells[i].volume - old_cells[j].volume) for i, j in old_pairs)
    return np.array([la1 - la0, lb1 - lb0, d_nof, d_surf, d_vsq, d_dvol])


def _feasible_trial(tess, index, radius):
    trial = trial_cells(tess, index, radius, stop_on_empty=True)
    if any(c is None for c in trial.values()):
        return None
    return trial


# ---------------------------------------------------------------------------
# pseudolikelihood


def quadrature_nodes(n_nodes: int = DEFAULT_NODES, r_max: float = 6.0):
    """Composite midpoint rule on ``[0, r_max]``."""
    h = r_max / n_nodes
    return (np.arange(n_nodes) + 0.5) * h, np.full(n_nodes, h)


@dataclass
class RadiiPLData:
    """Per-site statistic differences ``H(t^{j,u}) - H(t)`` at every quadrature node."""

    nodes: np.ndarray
    weights: np.ndarray
    delta: np.ndarray  # (m, K, len(KINDS))
    feasible: np.ndarray  # (m, K)
    observed: np.ndarray  # H(t) in KINDS order

    @classmethod
    def build(cls, pattern, n_nodes: int = DEFAULT_NODES, progress=None) -> "RadiiPLData":
        tess = pattern if isinstance(pattern, PeriodicTessellation) else build_tessellation(pattern)
        pat = tess.pattern
        if not tess.feasible:
            raise Infeasible(f"observed pattern has empty cells: {sorted(tess.empty)}")
        nodes, w = quadrature_nodes(n_nodes, pat.r_max)
        m = len(pat)
        delta = np.zeros((m, len(nodes), len(KINDS)))
        feas = np.zeros((m, len(nodes)), bool)
        for j in range(m):
            for k, u in enumerate(nodes):
                trial = _feasible_trial(tess, j, u)
                if trial is not None:
                    feas[j, k] = True
                    delta[j, k] = delta_stats(tess, j, u, trial)
            if not feas[j].any():
                raise QuadratureAllInfeasible(f"site {j}: no quadrature node gives a feasible tessellation")
            if progress is not None:
                progress(j + 1, m)
        return cls(nodes, w, delta, feas, all_stats(tess))

    def check(self, spec: RadiiModelSpec) -> None:
        cols = spec.columns()
        if not np.all(np.isfinite(self.observed[cols])):
            raise NonFiniteValue("observed statistics are not finite (a radius at 0 or r_max with a beta term)")


@dataclass
class RadiiPLValue:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _endpoint_terms(spec: RadiiModelSpec, n_nodes: int) -> list:
    """``(node, column)`` pairs whose beta factor is integrated exactly over the end cell.

    On ``[0, h]`` the factor ``(u / r_max)^theta`` has integral
    ``h (h / r_max)^theta / (theta + 1)``, against ``h (h / 2r_max)^theta`` from
    the midpoint; the log ratio ``theta log 2 - log(theta + 1)`` is added to
    the first node, and likewise for ``(1 - u / r_max)^theta`` at the last
    node.  It restores the divergence of the integral as ``theta -> -1``,
    which the midpoint rule alone misses.
    """
    kinds = spec.kinds
    out = []
    if "LogRadius" in kinds:
        out.append((0, kinds.index("LogRadius")))
    if "LogOneMinusRadius" in kinds:
        out.append((n_nodes - 1, kinds.index("LogOneMinusRadius")))
    return out


def _pl_radii(theta, D, feas, w, ends=()):
    """Log PL, gradient and Hessian from ``D = delta[..., cols]``.

    ``ends`` lists the ``(node, column)`` end-cell corrections of
    ``_endpoint_terms``.
    """
    K, q = D.shape[1], D.shape[2]
    c = np.zeros(K)
    dc = np.zeros((K, q))
    d2c = np.zeros((K, q))
    for k, col in ends:
        t = theta[col]
        if not t > -1:
            return -math.inf, np.full(q, np.nan), np.full((q, q), np.nan)
        c[k] += t * math.log(2.0) - math.log1p(t)
        dc[k, col] += math.log(2.0) - 1.0 / (1.0 + t)
        d2c[k, col] += 1.0 / (1.0 + t) ** 2
    a = np.where(feas, D @ theta + c[None, :], -np.inf)
    amax = a.max(axis=1, keepdims=True)
    e = np.where(feas, w[None, :] * np.exp(a - amax), 0.0)
    z = e.sum(axis=1)
    p = e / z[:, None]
    value = -float(np.sum(np.log(z) + amax[:, 0]))
    Dz = np.where(feas[..., None], D + dc[None, :, :], 0.0)
    mean = np.einsum("jk,jkq->jq", p, Dz)
    grad = -mean.sum(axis=0)
    # per-site covariance from centred values (stays PSD under rounding)
    C = np.where(feas[..., None], Dz - mean[:, None, :], 0.0)
    hess = -np.einsum("jk,jkq,jkr->qr", p, C, C) - np.diag(np.einsum("jk,kq->q", p, d2c))
    return value, grad, hess


def log_pseudolikelihood_radii(spec: RadiiModelSpec, pattern, n_nodes: int = DEFAULT_NODES, data: RadiiPLData = None) -> RadiiPLValue:
    """Log PL with gradient and Hessian in ``theta``.

    Each site contributes ``theta.H(t) - log int 1{feasible} exp(theta.H(t^{j,u})) du``,
    which equals ``-log int 1{feasible} exp(theta.(H(t^{j,u}) - H(t))) du``.
    """
    if data is None:
        data = RadiiPLData.build(pattern, n_nodes)
    data.check(spec)
    D = data.delta[..., spec.columns()]
    v, g, h = _pl_radii(spec.theta, D, data.feasible, data.weights, _endpoint_terms(spec, len(data.nodes)))
    return RadiiPLValue(v, g, h)


@dataclass
class RadiiFit:
    spec: RadiiModelSpec
    log_pl: float
    iterations: int

    def to_dict(self) -> dict:
        return {**self.spec.to_dict(), "logPL": self.log_pl, "iterations": self.iterations}


def fit_mple_radii(terms, pattern=None, data: RadiiPLData = None, n_nodes: int = DEFAULT_NODES,
                   tol: float = 1e-8, max_iter: int = 100, start=None) -> RadiiFit:
    """Newton-Raphson from ``theta = 0``, kept inside the admissible set.

    A full Newton step is taken when it keeps the beta-term parameters above
    -1 and does not decrease the log PL.  Otherwise Levenberg-Marquardt
    damped steps are tried (they turn towards the scaled gradient, which
    matters when the statistics differ in scale by orders of magnitude and
    the Newton direction points out of the admissible set), then plain step
    halving.  Converged when the gradient norm is below ``tol`` or the Newton
    decrement shows the remaining gain is at rounding level.
    """
    if isinstance(terms, RadiiModelSpec):
        terms = terms.terms
    elif isinstance(terms, str) or (terms and isinstance(terms[0], str)):
        terms = parse_terms(terms)
    spec = RadiiModelSpec(terms, start)
    if data is None:
        if pattern is None:
            raise ValueError("need a pattern or precomputed PL data")
        data = RadiiPLData.build(pattern, n_nodes)
    data.check(spec)
    D = data.delta[..., spec.columns()]
    feas, w = data.feasible, data.weights
    ends = _endpoint_terms(spec, len(data.nodes))
    theta = spec.theta.copy()
    val, g, h = _pl_radii(theta, D, feas, w, ends)
    for it in range(max_iter + 1):
        try:
            step = np.linalg.solve(-h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-h, g, rcond=None)[0]
        dec = float(g @ step)
        if np.linalg.norm(g) < tol or dec < 1e-13 * max(1.0, abs(val)):
            return RadiiFit(RadiiModelSpec(terms, theta), val, it)
        if it == max_iter:
            break
        found = _ascent_step(spec, theta, val, g, h, step, lambda t: _pl_radii(t, D, feas, w, ends))
        if found is None:
            raise NewtonDivergence("no admissible step increases the radii log pseudolikelihood")
        theta, val, g, h = found
    raise NewtonDivergence(f"no convergence after {max_iter} iterations (|grad| = {np.linalg.norm(g):.3g})")


def _ascent_step(spec, theta, val, g, h, newton, evaluate):
    """First admissible non-decreasing candidate among Newton, damped and halved steps."""
    scale = np.diag(np.maximum(np.abs(np.diag(h)), 1e-300))
    steps = [newton]
    for mu in 10.0 ** np.arange(-3, 9):
        try:
            steps.append(np.linalg.solve(-h + mu * scale, g))
        except np.linalg.LinAlgError:
            continue
    steps += [newton * 0.5**k for k in range(1, 60)]
    for step in steps:
        cand = theta + step
        if not spec.admissible(cand):
            continue
        cv, cg, ch = evaluate(cand)
        if np.isfinite(cv) and cv >= val:
            return cand, cv, cg, ch
    return None


# ---------------------------------------------------------------------------
# Metropolis-within-Gibbs


@dataclass
class MWGDiagnostics:
    proposed: int = 0
    accepted: int = 0
    out_of_range: int = 0
    infeasible: int = 0
    stat_trace: np.ndarray = field(default=None, repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def to_dict(self) -> dict:
        return {"proposed": self.proposed, "accepted": self.accepted, "acceptance_rate": self.acceptance_rate,
                "out_of_range": self.out_of_range, "infeasible": self.infeasible}


def _own_cell_violations(positions, w, window, index, nbrs):
    """Neighbours ``l`` of ``index`` such that one of the pair misses its own generator.

    Generator ``k`` lies strictly inside its own cell against ``l`` iff
    ``|x_k - x_l|^2 > w_l - w_k``.  When no pair in the pattern violates this,
    every cell contains its generator and hence is nonempty.
    """
    if len(nbrs) == 0:
        return 0
    d2 = np.sum(window.delta(positions[nbrs], positions[index]) ** 2, axis=1)
    return int(np.count_nonzero(d2 <= np.abs(w[nbrs] - w[index])))


def simulate_radii_mwg(spec: RadiiModelSpec, points, n_sweeps: int, proposal_sd: float = 0.2, rng_seed=None,
                       initial_radii=None, scan: str = "systematic", record_stats: bool = False):
    """Single-site Metropolis updates of the radii with Gaussian proposals.

    One sweep proposes a new radius for every generator, in index order for
    ``scan="systematic"`` or in a fresh random order per sweep for
    ``scan="random"``.  Returns ``(radii, diagnostics)``.
    """
    if isinstance(points, MarkedPointPattern):
        window, positions, r_max = points.window, points.positions, points.r_max
        if initial_radii is None:
            initial_radii = points.radii
    else:
        window, positions = points
        r_max = spec.r_max
    if initial_radii is None:
        raise InfeasibleInitial("initial radii required")
    radii = np.asarray(initial_radii, float).copy()
    m = len(positions)
    if len(radii) != m:
        raise InvalidPattern("initial radii do not match the points")
    if np.any(radii < 0) or np.any(radii > r_max):
        raise InfeasibleInitial("initial radii outside [0, r_max]")
    pat = MarkedPointPattern(window, positions, radii, r_max, validate=False)
    tess = build_tessellation(pat)
    if not tess.feasible:
        raise InfeasibleInitial(f"initial state has empty cells: {sorted(tess.empty)}")
    rng = np.random.default_rng(rng_seed)
    theta = spec.theta
    cols = spec.columns()
    diag = MWGDiagnostics()
    trace = [] if record_stats else None
    # isolated-site shortcut for beta-only models: the statistics need no
    # geometry, and feasibility is certain while every generator lies inside
    # its own cell; the tessellation is then only refreshed when needed
    fast = spec.beta_only
    if fast:
        tree = window.tree(positions)
        near = [np.array([l for l in tree.query_ball_point(positions[k], r_max) if l != k], dtype=np.int64)
                for k in range(m)]
        w = radii * radii
        violations = sum(_own_cell_violations(positions, w, window, k, near[k]) for k in range(m)) // 2
    stale = False
    for sweep in range(n_sweeps):
        order = np.arange(m) if scan == "systematic" else rng.permutation(m)
        props = rng.normal(0.0, proposal_sd, m)
        logu = np.log(rng.random(m))
        for s, j in enumerate(order):
            diag.proposed += 1
            u = radii[j] + props[s]
            if u < 0.0 or u > r_max:
                diag.out_of_range += 1
                continue
            if fast:
                la0, lb0 = _radius_terms(radii[j], r_max)
                la1, lb1 = _radius_terms(u, r_max)
                dh = np.array([la1 - la0, lb1 - lb0, 0, 0, 0, 0])[cols]
                v_old = _own_cell_violations(positions, w, window, j, near[j])
                w[j] = u * u
                v_new = _own_cell_violations(positions, w, window, j, near[j])
                w[j] = radii[j] ** 2
                ok = violations - v_old + v_new == 0
                trial = None
                if not ok:
                    if stale:
                        tess = build_tessellation(MarkedPointPattern(window, positions, radii.copy(), r_max, validate=False))
                        stale = False
                    trial = _feasible_trial(tess, j, u)
                    if trial is None:
                        diag.infeasible += 1
                        continue
                with np.errstate(invalid="ignore"):
                    la = float(np.dot(theta, dh))
                if logu[s] < la:
                    radii[j] = u
                    w[j] = u * u
                    violations += v_new - v_old
                    diag.accepted += 1
                    if trial is not None:
                        tess = apply_trial(tess, j, u, trial)
                    else:
                        stale = True
                continue
            trial = _feasible_trial(tess, j, u)
            if trial is None:
                diag.infeasible += 1
                continue
            dh = delta_stats(tess, j, u, trial)[cols]
            with np.errstate(invalid="ignore"):
                la = float(np.dot(theta, dh))
            if logu[s] < la:
                tess = apply_trial(tess, j, u, trial)
                radii[j] = u
                diag.accepted += 1
        if record_stats:
            if stale:
                tess = build_tessellation(MarkedPointPattern(window, positions, radii.copy(), r_max, validate=False))
                stale = False
            trace.append(sufficient_stats(spec, tess))
    if record_stats:
        diag.stat_trace = np.array(trace)
    return radii, diag
