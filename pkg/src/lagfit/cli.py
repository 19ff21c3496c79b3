"""Command-line interface.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure, 4 model rejection (select commands with ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, derive_seed, load_config
from .envelopes import area_rank_envelope, permutation_mark_test
from .errors import (
    ConfigError,
    DegenerateConfiguration,
    Infeasible,
    InvalidPattern,
    LagfitError,
    NewtonDivergence,
    NoModelAccepted,
    NonFiniteValue,
    QuadratureAllInfeasible,
    ReplicateCountMismatch,
    TooFewReplicates,
)
from .gibbs_points import MultiscaleParams, fit_mple_points
from .pattern import MarkedPointPattern, Window, read_pattern_csv, write_pattern_csv
from .pipeline import (
    STREAM_JOINT,
    load_observed,
    provenance,
    select_point_model,
    select_radii_model,
    simulate_joint,
    simulate_points,
)
from .radii_model import RadiiModelSpec, fit_mple_radii, parse_terms, simulate_radii_mwg
from .summaries import (
    CurveSet,
    DensitySettings,
    characteristic_density,
    default_grid,
    f_function,
    g_function,
    l_function,
    mark_correlation,
    octant_radii_densities,
    write_curves_csv,
)
from .tessellation import (
    build_tessellation,
    characteristic_samples,
    correlation_table,
    write_cells_csv,
    write_faces_csv,
    write_slices_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_REJECTED = 4

log = logging.getLogger("lagfit")


def _dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def parse_delta_grid(text: str):
    """``start:stop:step`` values, a comma list of values, or ``;``-separated tuples like ``1.25/2.25``."""
    text = text.strip()
    if ";" in text or "/" in text:
        return [tuple(float(x) for x in part.split("/")) for part in text.split(";") if part.strip()]
    if ":" in text:
        a, b, s = (float(x) for x in text.split(":"))
        n = int(round((b - a) / s)) + 1
        return [round(a + i * s, 10) for i in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _config(args) -> RunConfig:
    over = {}
    if getattr(args, "window", None):
        over["window"] = tuple(Window.parse(args.window).as_list())
    if getattr(args, "csv", None):
        over["input_csv"] = args.csv
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out_dir", None):
        over["output_dir"] = args.out_dir
    for key in ("r_max", "alpha", "d_max", "n_sims_points", "n_sims_joint", "bdm_steps", "bdm_burn_in",
                "mwg_burn_in", "proposal_sd", "radii_nodes"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if getattr(args, "lattice", None):
        over["pl_lattice"] = tuple(int(x) for x in args.lattice.split(","))
    if getattr(args, "delta_grid", None) and np.ndim(parse_delta_grid(args.delta_grid)[0]) == 0:
        over["delta_values"] = tuple(parse_delta_grid(args.delta_grid))
    if getattr(args, "candidates", None):
        over["radii_candidates"] = tuple(c for c in args.candidates.split(";") if c.strip())
    return load_config(getattr(args, "config", None), **over)


def _pattern(cfg: RunConfig, path=None) -> MarkedPointPattern:
    return read_pattern_csv(path or cfg.input_csv, Window(*cfg.window), cfg.r_max)


def _outdir(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_tessellation_outputs(cfg: RunConfig, tess, prefix: str = "") -> None:
    out = _outdir(cfg)
    write_cells_csv(out / f"{prefix}cells.csv", tess)
    write_faces_csv(out / f"{prefix}faces.csv", tess)
    if cfg.slice_z:
        write_slices_json(out / f"{prefix}slices.json", tess, cfg.slice_z, provenance(cfg))


# ---------------------------------------------------------------------------
# subcommands


def cmd_tessellate(args) -> int:
    cfg = _config(args)
    pat = _pattern(cfg)
    if args.slices:
        cfg = cfg.with_overrides(slice_z=tuple(_floats(args.slices)))
    tess = build_tessellation(pat)
    _write_tessellation_outputs(cfg, tess)
    report = {
        "provenance": provenance(cfg),
        "n_generators": len(pat),
        "n_empty": len(tess.empty),
        "empty": sorted(tess.empty),
        "total_volume": tess.total_volume(),
        "window_volume": pat.window.volume,
        "correlations": correlation_table(tess),
    }
    _dump(report, _outdir(cfg) / "tessellation.json")
    return EXIT_OK


def cmd_fit_points(args) -> int:
    cfg = _config(args)
    pat = _pattern(cfg)
    grid = parse_delta_grid(args.delta_grid) if args.delta_grid else cfg.delta_values
    fit = fit_mple_points((pat.window, pat.positions), args.d, grid, cfg.pl_lattice)
    _dump({"provenance": provenance(cfg), **fit.to_dict()}, args.out)
    return EXIT_OK


def _load_params(path) -> MultiscaleParams:
    data = json.loads(Path(path).read_text())
    if "params" in data:
        data = data["params"]
    if "selected" in data and data["selected"]:
        data = data["selected"]
    return MultiscaleParams.from_dict(data)


def cmd_simulate_points(args) -> int:
    cfg = _config(args)
    params = _load_params(args.params)
    if args.steps is not None:
        cfg = cfg.with_overrides(bdm_steps=args.steps)
    pts = simulate_points(cfg, params, cfg.seed)
    pat = MarkedPointPattern(Window(*cfg.window), pts, None, cfg.r_max, validate=False)
    write_pattern_csv(args.out, pat, with_radii=False)
    return EXIT_OK


def cmd_fit_radii(args) -> int:
    cfg = _config(args)
    pat = _pattern(cfg)
    fit = fit_mple_radii(parse_terms(args.terms, cfg.r_max), pattern=pat, n_nodes=cfg.radii_nodes)
    _dump({"provenance": provenance(cfg), **fit.to_dict()}, args.out)
    return EXIT_OK


def cmd_simulate_radii(args) -> int:
    cfg = _config(args)
    spec = RadiiModelSpec.from_names(args.terms, _floats(args.theta), cfg.r_max)
    pts = _pattern(cfg, args.points)
    r0 = pts.radii if args.keep_radii else np.full(len(pts), cfg.initial_radius)
    radii, diag = simulate_radii_mwg(spec, (pts.window, pts.positions), args.sweeps, cfg.proposal_sd, cfg.seed, r0)
    write_pattern_csv(args.out, MarkedPointPattern(pts.window, pts.positions, radii, cfg.r_max, validate=False))
    if args.report:
        _dump({"provenance": provenance(cfg), "model": spec.to_dict(), "diagnostics": diag.to_dict()}, args.report)
    return EXIT_OK


def _load_spec(path, r_max) -> RadiiModelSpec:
    data = json.loads(Path(path).read_text())
    if "selected" in data:
        data = data["selected"]
    return RadiiModelSpec.from_dict(data, r_max)


def cmd_simulate_joint(args) -> int:
    cfg = _config(args)
    params = _load_params(args.point_params)
    if args.radii_model:
        spec = _load_spec(args.radii_model, cfg.r_max)
    else:
        spec = RadiiModelSpec.from_names(args.terms, _floats(args.theta), cfg.r_max)
    if args.slices:
        cfg = cfg.with_overrides(slice_z=tuple(_floats(args.slices)))
    out = _outdir(cfg)
    reps = []
    for k in range(args.replicates):
        seed = derive_seed(cfg.seed, STREAM_JOINT, k)
        pat = simulate_joint(cfg, params, spec, seed, args.sweeps)
        prefix = f"rep{k + 1:04d}_" if args.replicates > 1 else ""
        write_pattern_csv(out / f"{prefix}pattern.csv", pat)
        tess = build_tessellation(pat)
        _write_tessellation_outputs(cfg, tess, prefix)
        reps.append({"replicate": k + 1, "seed": seed, "n_generators": len(pat), "n_empty": len(tess.empty)})
    report = {"provenance": provenance(cfg), "point_params": params.to_dict(), "radii_model": spec.to_dict(),
              "replicates": reps}
    _dump(report, out / "simulate_joint.json")
    return EXIT_OK


def _read_curves(path) -> CurveSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    off = 1 if header[0] == "block" else 0
    if header[off] != "t" or header[off + 1] != "observed":
        raise InvalidPattern(f"{path}: expected columns t,observed,sim_1,...")
    data = np.array([[float(x) for x in r[off:]] for r in body])
    blocks = []
    if off:
        labels = [r[0] for r in body]
        start = 0
        for i in range(1, len(labels) + 1):
            if i == len(labels) or labels[i] != labels[start]:
                blocks.append((labels[start], start, i))
                start = i
    return CurveSet(Path(path).stem, data[:, 0], data[:, 1], data[:, 2:].T, blocks)


def cmd_envelope(args) -> int:
    cfg = _config(args)
    curves = _read_curves(args.curves)
    res = area_rank_envelope(curves, cfg.alpha, args.measure)
    out = res.to_dict()
    out["provenance"] = provenance(cfg)
    _dump(out, args.out)
    if args.envelope_csv:
        res.write_csv(args.envelope_csv)
    return EXIT_OK


def _strict_exit(args, accepted) -> int:
    return EXIT_REJECTED if args.strict and not accepted else EXIT_OK


def cmd_select_points(args) -> int:
    cfg = _config(args)
    pat, dropped = load_observed(cfg)
    out = _outdir(cfg)
    try:
        fit, env, report = select_point_model(cfg, pat)
    except NoModelAccepted as exc:
        report = exc.report
        report["dropped_generators"] = dropped
        _dump(report, out / "select_points.json")
        log.warning("%s", exc)
        return _strict_exit(args, False)
    report["dropped_generators"] = dropped
    _dump(report, out / "select_points.json")
    env.write_csv(out / "select_points_envelope.csv")
    _dump({"provenance": provenance(cfg), **fit.to_dict()}, out / "point_model.json")
    return EXIT_OK


def cmd_select_radii(args) -> int:
    cfg = _config(args)
    pat, dropped = load_observed(cfg)
    params = _load_params(args.point_params)
    out = _outdir(cfg)
    best, report = select_radii_model(cfg, pat, params, test=not args.no_test)
    report["dropped_generators"] = dropped
    _dump(report, out / "select_radii.json")
    if best is not None:
        _dump({"provenance": provenance(cfg), "selected": best.spec.to_dict()}, out / "radii_model.json")
    return _strict_exit(args, best is not None or args.no_test)


def cmd_report(args) -> int:
    """Plot-ready summaries of the observed data."""
    cfg = _config(args)
    pat, dropped = load_observed(cfg)
    out = _outdir(cfg)
    grid = default_grid(pat.window, cfg.grid_points)
    for fn, name in ((l_function, "L"), (f_function, "F"), (g_function, "G")):
        write_curves_csv(out / f"summary_{name}.csv", fn(pat, grid))
    write_curves_csv(out / "summary_kmm.csv", mark_correlation(pat, grid))
    tess = build_tessellation(pat)
    samples = characteristic_samples(tess)
    settings = DensitySettings.from_samples(samples, cfg.density_points)
    for k, g in settings.grids.items():
        write_curves_csv(out / f"density_{k}.csv", characteristic_density(samples[k], g, settings.bandwidths[k], k))
    for name, c in octant_radii_densities(pat).items():
        write_curves_csv(out / f"octant_{name}.csv", c)
    report = {"provenance": provenance(cfg), "n_generators": len(pat), "dropped_generators": dropped,
              "correlations": correlation_table(tess),
              "means": {k: float(np.mean(v)) for k, v in samples.items()},
              "sds": {k: float(np.std(v, ddof=1)) for k, v in samples.items()}}
    if args.mark_test:
        res = permutation_mark_test(pat, args.mark_test, cfg.alpha, derive_seed(cfg.seed, 9), grid)
        report["mark_test"] = res.to_dict()
        res.write_csv(out / "mark_test_envelope.csv")
    _dump(report, out / "report.json")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagfit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lagfit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, csv_in=False):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--window", help="box sides a,b,c")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--r-max", dest="r_max", type=float)
        if csv_in:
            sp.add_argument("--csv", help="input pattern x,y,z[,r]")
        return sp

    sp = common(sub.add_parser("tessellate", help="cells, faces and slices of a marked pattern"), True)
    sp.add_argument("--slices", help="comma list of z values for slice polygons")
    sp.set_defaults(func=cmd_tessellate)

    sp = common(sub.add_parser("fit-points", help="profile MPLE of the multiscale point model"), True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--delta-grid", dest="delta_grid")
    sp.add_argument("--lattice", help="quadrature nodes nx,ny,nz")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit_points)

    sp = common(sub.add_parser("simulate-points", help="birth-death-move simulation"))
    sp.add_argument("--params", required=True, help="JSON with beta, gammas, deltas")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--burn-in", dest="bdm_burn_in", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate_points)

    sp = common(sub.add_parser("fit-radii", help="MPLE of the radii model given points"), True)
    sp.add_argument("--terms", required=True, help="e.g. beta,nof,dvol")
    sp.add_argument("--nodes", dest="radii_nodes", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit_radii)

    sp = common(sub.add_parser("simulate-radii", help="Metropolis-within-Gibbs simulation of radii"))
    sp.add_argument("--terms", required=True)
    sp.add_argument("--theta", required=True, help="comma list, one value per statistic")
    sp.add_argument("--points", required=True)
    sp.add_argument("--sweeps", type=int, required=True)
    sp.add_argument("--proposal-sd", dest="proposal_sd", type=float)
    sp.add_argument("--keep-radii", action="store_true", help="start from the radii in --points")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_simulate_radii)

    sp = common(sub.add_parser("simulate-joint", help="points then radii from the fitted models"))
    sp.add_argument("--point-params", dest="point_params", required=True)
    sp.add_argument("--radii-model", dest="radii_model", help="JSON with terms and theta")
    sp.add_argument("--terms", default="beta")
    sp.add_argument("--theta", default="0,0")
    sp.add_argument("--sweeps", type=int)
    sp.add_argument("--replicates", type=int, default=1)
    sp.add_argument("--steps", dest="bdm_steps", type=int)
    sp.add_argument("--burn-in", dest="bdm_burn_in", type=int)
    sp.add_argument("--slices")
    sp.set_defaults(func=cmd_simulate_joint)

    sp = common(sub.add_parser("envelope", help="area rank envelope test of a curve CSV"))
    sp.add_argument("--curves", required=True, help="CSV t,observed,sim_1,...")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--measure", choices=("area", "rank"), default="area")
    sp.add_argument("--out")
    sp.add_argument("--envelope-csv", dest="envelope_csv")
    sp.set_defaults(func=cmd_envelope)

    sp = common(sub.add_parser("select-points", help="fit M_1, M_2, ... until accepted"), True)
    sp.add_argument("--d-max", dest="d_max", type=int)
    sp.add_argument("--n-sims", dest="n_sims_points", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_select_points)

    sp = common(sub.add_parser("select-radii", help="rank radii models and test group winners"), True)
    sp.add_argument("--point-params", dest="point_params", required=True)
    sp.add_argument("--candidates", help="';'-separated term lists")
    sp.add_argument("--n-sims", dest="n_sims_joint", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--no-test", dest="no_test", action="store_true", help="rank by log PL only")
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_select_radii)

    sp = common(sub.add_parser("report", help="plot-ready summaries of the observed data"), True)
    sp.add_argument("--mark-test", dest="mark_test", type=int, default=0, help="number of mark permutations")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidPattern, ReplicateCountMismatch, TooFewReplicates, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonDivergence, NonFiniteValue, DegenerateConfiguration, QuadratureAllInfeasible, Infeasible) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LagfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
