"""Model-selection workflow: point model first, then the radii model given the points."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from . import __version__
from .config import RunConfig, derive_seed
from .envelopes import area_rank_envelope, concat_curves
from .errors import LagfitError, NoModelAccepted
from .gibbs_points import MultiscaleParams, fit_mple_points, simulate_bdm
from .pattern import MarkedPointPattern, Window, read_pattern_csv
from .radii_model import RadiiModelSpec, RadiiPLData, fit_mple_radii, parse_terms, simulate_radii_mwg
from .summaries import CurveSet, DensitySettings, default_grid, lfg_values, moment_table
from .tessellation import build_tessellation, characteristic_samples

log = logging.getLogger(__name__)

# sub-stream keys for derive_seed
STREAM_POINT_SIMS = 1
STREAM_JOINT_SIMS = 2
STREAM_JOINT = 3


def provenance(config: RunConfig, **extra) -> dict:
    return {"config_hash": config.hash(), "seed": config.seed, "version": __version__, **extra}


def load_observed(config: RunConfig, path=None) -> tuple[MarkedPointPattern, list]:
    """Read the input pattern and drop generators whose cells are empty."""
    path = path or config.input_csv
    if path is None:
        raise LagfitError("no input CSV configured")
    pat = read_pattern_csv(path, Window(*config.window), config.r_max)
    tess = build_tessellation(pat)
    dropped = sorted(tess.empty)
    if dropped:
        log.info("dropping %d generators with empty cells", len(dropped))
        pat = pat.subset(np.setdiff1d(np.arange(len(pat)), dropped))
    return pat, dropped


# ---------------------------------------------------------------------------
# points


def simulate_points(config: RunConfig, params: MultiscaleParams, seed: int) -> np.ndarray:
    pts, _ = simulate_bdm(params, Window(*config.window), config.bdm_steps, seed, burn_in=config.bdm_burn_in,
                          move_sd=config.move_sd)
    return Window(*config.window).wrap(pts)


def point_model_test(config: RunConfig, pattern: MarkedPointPattern, params: MultiscaleParams, stream: int = 0):
    """Concatenated L(t)-t, F, G area rank test of ``params`` against ``pattern``."""
    window = pattern.window
    grid = default_grid(window, config.grid_points)
    obs = lfg_values(window, pattern.positions, grid, config.f_lattice)
    sims = []
    for k in range(config.n_sims_points):
        pts = simulate_points(config, params, derive_seed(config.seed, STREAM_POINT_SIMS, stream, k))
        if len(pts) < 2:
            raise LagfitError("simulated pattern has fewer than two points")
        sims.append(lfg_values(window, pts, grid, config.f_lattice))
    n = len(grid)
    blocks = [("L-t", 0, n), ("F", n, 2 * n), ("G", 2 * n, 3 * n)]
    curves = [CurveSet(lab, grid, obs[a:b], np.array(sims)[:, a:b]) for lab, a, b in blocks]
    return area_rank_envelope(concat_curves(curves, config.scale_blocks), config.alpha)


def select_point_model(config: RunConfig, pattern: MarkedPointPattern):
    """Fit M_1, M_2, ... and stop at the first order the envelope test does not reject.

    Returns ``(fit, envelope, report)``.  Raises ``NoModelAccepted`` (with the
    report attached) if every order up to ``d_max`` is rejected.
    """
    report = {"provenance": provenance(config), "orders": []}
    for d in range(1, config.d_max + 1):
        fit = fit_mple_points((pattern.window, pattern.positions), d, config.delta_values, config.pl_lattice)
        env = point_model_test(config, pattern, fit.params, stream=d)
        entry = {"d": d, "fit": fit.to_dict(), "test": env.to_dict()}
        report["orders"].append(entry)
        log.info("d=%d logPL=%.4f p=%.4f", d, fit.log_pl, env.p_upper)
        if not env.rejected:
            report["selected"] = fit.params.to_dict()
            return fit, env, report
    report["selected"] = None
    raise NoModelAccepted(f"every order up to d={config.d_max} rejected", report)


# ---------------------------------------------------------------------------
# joint model


def simulate_joint(config: RunConfig, params: MultiscaleParams, spec: RadiiModelSpec, seed: int,
                   sweeps: int = None) -> MarkedPointPattern:
    """Points by birth-death-move, then radii by Metropolis-within-Gibbs.

    The radii chain starts from equal radii, which always give a feasible
    (Voronoi) tessellation.
    """
    window = Window(*config.window)
    s_points, s_radii = np.random.SeedSequence(seed).spawn(2)
    pts = simulate_points(config, params, s_points)
    if len(pts) == 0:
        raise LagfitError("simulated point pattern is empty")
    r0 = np.full(len(pts), config.initial_radius)
    sweeps = config.mwg_burn_in if sweeps is None else sweeps
    radii, _ = simulate_radii_mwg(spec, (window, pts), sweeps, config.proposal_sd, s_radii, r0)
    return MarkedPointPattern(window, pts, radii, config.r_max, validate=False)


def joint_model_test(config: RunConfig, observed_samples: dict, params, spec, stream: int = 0):
    """Six-density concatenated test and per-replicate characteristic samples."""
    settings = DensitySettings.from_samples(observed_samples, config.density_points)
    obs = settings.curves(observed_samples)
    reps, sims = [], []
    for k in range(config.n_sims_joint):
        pat = simulate_joint(config, params, spec, derive_seed(config.seed, STREAM_JOINT_SIMS, stream, k))
        s = characteristic_samples(build_tessellation(pat))
        reps.append(s)
        sims.append(settings.values(s))
    curves = obs.with_sims(np.array(sims))
    if config.scale_blocks:
        parts = [CurveSet(lab, curves.grid[a:b], curves.observed[a:b], curves.sims[:, a:b]) for lab, a, b in curves.blocks]
        curves = concat_curves(parts, config.scale_blocks)
    return area_rank_envelope(curves, config.alpha), reps


def _group(spec: RadiiModelSpec) -> str:
    fam = "beta" if "LogRadius" in spec.kinds else "no-beta"
    return f"{fam}/q={len(spec.terms)}"


def select_radii_model(config: RunConfig, pattern: MarkedPointPattern, params: MultiscaleParams,
                       pl_data: RadiiPLData = None, test: bool = True):
    """Rank candidate term sets by maximized log PL within each group of equal dimension.

    Groups separate models with and without the beta terms.  The winner of
    each group is checked with the joint-model envelope test; the selected
    model is the accepted winner with the largest p-value.
    Returns ``(selected fit or None, report)``.
    """
    if not config.radii_candidates:
        raise LagfitError("no candidate radii models configured")
    tess = build_tessellation(pattern)
    if pl_data is None:
        pl_data = RadiiPLData.build(tess, config.radii_nodes)
    observed_samples = characteristic_samples(tess)
    fits = []
    for names in config.radii_candidates:
        try:
            fit = fit_mple_radii(parse_terms(names, config.r_max), data=pl_data)
        except LagfitError as exc:
            warnings.warn(f"candidate {names!r} skipped: {exc}", RuntimeWarning, stacklevel=2)
            continue
        fits.append(fit)
    if not fits:
        raise LagfitError("every candidate radii model failed to fit")
    groups = {}
    for f in fits:
        groups.setdefault(_group(f.spec), []).append(f)
    table = []
    winners = {}
    for g in sorted(groups):
        ranked = sorted(groups[g], key=lambda f: -f.log_pl)
        winners[g] = ranked[0]
        for rank, f in enumerate(ranked, 1):
            table.append({"group": g, "rank": rank, **f.to_dict()})
    report = {"provenance": provenance(config), "point_params": params.to_dict(), "log_pl_table": table,
              "tests": [], "moment_tables": {}}
    best, best_p = None, -1.0
    if test:
        for i, g in enumerate(sorted(winners)):
            f = winners[g]
            env, reps = joint_model_test(config, observed_samples, params, f.spec, stream=i)
            report["tests"].append({"group": g, "model": f.spec.label, **env.to_dict()})
            report["moment_tables"][f.spec.label] = moment_table(observed_samples, reps)
            if not env.rejected and env.p_upper > best_p:
                best, best_p = f, env.p_upper
    report["selected"] = None if best is None else best.to_dict()
    return best, report
