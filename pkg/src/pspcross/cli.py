"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import gps
from .density import DegenerateSampleError
from .estimators import (
    exact_oracle,
    kr_nonstationary,
    kr_stationary,
    make_model,
    model_speed_projection,
    monte_carlo,
)
from .harness import ConfigError, ExperimentConfig, canonical_process, run_experiment, write_experiment_csv
from .psp_sim import SimulationError, read_dataset_csv, sample_grid, simulate_many, write_dataset_csv
from .surfaces import Segment, surface_from_config, surface_to_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_arg(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None


def _add_surface(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--level", type=float, help="crossing level (1D)")
    g.add_argument("--square", type=float, metavar="C", help="square with vertices (+-C, +-C)")
    g.add_argument("--segment", type=float, nargs=4, metavar=("AX", "AY", "BX", "BY"), help="segment [AB]")
    g.add_argument("--surface", type=_json_arg, help='surface as JSON, e.g. \'{"type":"level","x":2}\'')


def _surface(args, required=True):
    if args.surface is not None:
        return surface_from_config(args.surface)
    if args.level is not None:
        return surface_from_config({"type": "level", "x": args.level})
    if args.square is not None:
        return surface_from_config({"type": "square", "c": args.square})
    if args.segment is not None:
        return Segment(tuple(args.segment[:2]), tuple(args.segment[2:]))
    if required:
        raise UsageError("a surface is required (--level, --square, --segment or --surface)")
    return None


def _add_process(p, required=True):
    p.add_argument("--process", required=required, help="telegraph (telegraph1d), pdsa or telegraph2d")
    p.add_argument("--params", type=_json_arg, default=None, help='model parameters as JSON, e.g. \'{"a":1,"b":2}\'')


def _grid_points(args):
    if args.n_points is not None and args.h is not None:
        if abs(args.h * (args.n_points - 1) - args.H) > 1e-9:
            raise UsageError("--h and --n-points disagree with --H")
    if args.n_points is not None:
        return args.n_points
    if args.h is not None:
        return int(round(args.H / args.h)) + 1
    raise UsageError("give --h or --n-points")


def _dump(obj):
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        return v

    print(json.dumps(clean(obj), indent=2, sort_keys=True))


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    model = make_model(canonical_process(args.process), args.params)
    n_pts = _grid_points(args)
    trajs = simulate_many(model, args.n, args.H, args.seed, args.replicate)
    data = [sample_grid(t, n_pts) for t in trajs]
    with _open_out(args.out) as fh:
        write_dataset_csv(data, fh)
    return EXIT_OK


def cmd_estimate(args):
    with open(args.dataset, newline="", encoding="utf-8") as fh:
        data = read_dataset_csv(fh)
    surface = _surface(args)
    method = {"mc": "monte_carlo", "kr_ns": "kr_nonstationary", "kr_s": "kr_stationary"}[args.method]
    if method == "monte_carlo":
        est = monte_carlo(data, surface)
    else:
        if args.process is None:
            raise UsageError("Kac-Rice estimators need --process for the speed projection")
        sp = model_speed_projection(make_model(canonical_process(args.process), args.params))
        if method == "kr_nonstationary":
            est = kr_nonstationary(data, surface, sp, args.bw, step=args.step, quadrature=args.quadrature)
        else:
            est = kr_stationary(data, surface, sp, args.bw, step=args.step)[1]
    _dump(est.to_dict())
    return EXIT_OK


def cmd_experiment(args):
    overrides = {"n": args.n, "replicates": args.replicates, "seed": args.seed, "h": args.h,
                 "n_points": args.n_points, "horizon": args.H, "output": args.out,
                 "process": args.process, "params": args.params, "bw_method": args.bw,
                 "step": args.step, "quadrature": args.quadrature}
    surface = _surface(args, required=False)
    if surface is not None:
        overrides["surface"] = surface_to_config(surface)
    if args.estimators:
        overrides["estimators"] = args.estimators.split(",")
    if args.config:
        cfg = ExperimentConfig.from_json(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    results = run_experiment(cfg, args.workers)
    with _open_out(cfg.output) as fh:
        write_experiment_csv(cfg, results, fh, timings=args.timings)
    failed = sum(len(r.errors) for r in results)
    if failed:
        logging.warning("%d estimator run(s) failed; see the status column", failed)
    return EXIT_OK


def cmd_oracle(args):
    model = make_model(canonical_process(args.process), args.params)
    est = exact_oracle(model, _surface(args), args.H, args.n_ref, args.seed)
    _dump(est.to_dict())
    return EXIT_OK


def _load_days(args):
    records = gps.ingest_csv(args.input, args.columns, strict=False)
    days = gps.slice_and_regrid(records, args.min_count, args.max_count, args.n_points,
                                args.ref_lat, args.heading_convention)
    if not days:
        raise ValueError("no day passes the record-count filter")
    return days


def cmd_gps_synth(args):
    records, _ = gps.simulate_gps_days(args.days, args.seed, origin=tuple(args.origin), unit_m=args.unit)
    with _open_out(args.out) as fh:
        gps.write_gps_csv(records, fh)
    return EXIT_OK


def cmd_gps_ingest(args):
    days = _load_days(args)
    with _open_out(args.out) as fh:
        write_dataset_csv([d.to_grid() for d in days], fh)
    logging.info("%d day(s) written", len(days))
    return EXIT_OK


def cmd_gps_project(args):
    days = _load_days(args)
    seg = Segment(tuple(args.segment[:2]), tuple(args.segment[2:]))
    sp = gps.speed_projection_estimate(days, seg, args.eps, args.dx_proj, averaging=args.averaging)
    d = sp.data
    with _open_out(args.out) as fh:
        fh.write("u,count,raw_plus,raw_minus,plus,minus\n")
        for k in range(len(d["u"])):
            fh.write(",".join([repr(float(d["u"][k])), str(int(d["counts"][k]))]
                              + [repr(float(d[c][k])) for c in ("raw_plus", "raw_minus", "plus", "minus")]) + "\n")
    return EXIT_OK


def cmd_gps_curve(args):
    days = _load_days(args)
    sea, inland = gps.segment_families(dx=args.dx, count=args.count)
    fam = sea if args.direction == "sea" else inland
    rows = []
    for method in args.method.split(","):
        curve = gps.crossing_curve(days, fam, method, args.eps, args.dx_proj, args.bw, args.step,
                                   averaging=args.averaging)
        rows += [(dist, est, method, args.direction) for dist, est in curve]
    with _open_out(args.out) as fh:
        gps.write_curve_csv(rows, fh)
    return EXIT_OK


class _open_out:
    """``-`` or ``None`` means stdout."""

    def __init__(self, path):
        self.path = path
        self.fh = None

    def __enter__(self):
        if self.path in (None, "-"):
            return sys.stdout
        self.fh = open(self.path, "w", newline="", encoding="utf-8")
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not None:
            self.fh.close()


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pspcross", description="Crossing counts of piecewise smooth processes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate trajectories and write a grid dataset CSV")
    _add_process(s)
    s.add_argument("--H", type=float, required=True, help="horizon")
    s.add_argument("--h", type=float, help="grid step")
    s.add_argument("--n-points", type=int, help="grid points n_H (alternative to --h)")
    s.add_argument("--n", type=int, default=100, help="number of trajectories (default 100)")
    s.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    s.add_argument("--replicate", type=int, default=0, help="replicate index of the RNG streams (default 0)")
    s.add_argument("--out", default="-", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="apply one estimator to a saved dataset; JSON to stdout")
    e.add_argument("--dataset", required=True, help="dataset CSV written by 'simulate' or 'gps ingest'")
    e.add_argument("--method", choices=("mc", "kr_ns", "kr_s"), required=True)
    _add_surface(e)
    _add_process(e, required=False)
    e.add_argument("--bw", choices=("normal_reference", "silverman_1d"), help="bandwidth rule")
    e.add_argument("--step", type=float, default=0.1, help="surface quadrature step (default 0.1)")
    e.add_argument("--quadrature", choices=("rectangle", "trapezoid"), default="rectangle",
                   help="time weights of kr_ns (default rectangle)")
    e.set_defaults(func=cmd_estimate)

    x = sub.add_parser("experiment", help="replicated estimator runs from a JSON config")
    x.add_argument("--config", help="JSON config file; flags below override it")
    x.add_argument("--n", type=int)
    x.add_argument("--replicates", type=int)
    x.add_argument("--seed", type=int)
    x.add_argument("--H", type=float)
    x.add_argument("--h", type=float)
    x.add_argument("--n-points", type=int)
    x.add_argument("--estimators", help="comma-separated list of mc, kr_ns, kr_s, closed_form")
    _add_process(x, required=False)
    _add_surface(x)
    x.add_argument("--bw", choices=("normal_reference", "silverman_1d"), help="bandwidth rule")
    x.add_argument("--step", type=float, help="surface quadrature step")
    x.add_argument("--quadrature", choices=("rectangle", "trapezoid"), help="time weights of kr_ns")
    x.add_argument("--out", help="output CSV (default stdout)")
    x.add_argument("--workers", type=int, help="worker processes (default from PSPCROSS_THREADS, else 1)")
    x.add_argument("--timings", action="store_true", help="add a wall_time column (output no longer byte-stable)")
    x.set_defaults(func=cmd_experiment)

    o = sub.add_parser("oracle", help="mean exact crossing count over fresh simulations; JSON to stdout")
    _add_process(o)
    _add_surface(o)
    o.add_argument("--H", type=float, required=True, help="horizon")
    o.add_argument("--n-ref", type=int, default=5000, help="number of simulations (default 5000)")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("gps", help="GPS trajectory pipeline")
    gsub = g.add_subparsers(dest="gps_command", metavar="STEP", parser_class=_Parser)

    def data_flags(q):
        q.add_argument("--input", required=True, help="GPS CSV")
        q.add_argument("--columns", type=_json_arg, default=None,
                       help="column map as JSON, keys timestamp, lat, lon, ground_speed, heading")
        q.add_argument("--min-count", type=int, default=440, help="fewest records per retained day (default 440)")
        q.add_argument("--max-count", type=int, default=467, help="most records per retained day (default 467)")
        q.add_argument("--n-points", type=int, default=gps.DEFAULT_N_POINTS, help="daily grid points (default 468)")
        q.add_argument("--ref-lat", type=float, default=gps.REF_LAT, help="reference latitude of the m/s conversion")
        q.add_argument("--heading-convention", choices=gps.HEADINGS, default="compass",
                       help="compass: clockwise from north (default); literal: v(cos t, sin t) with t = heading - 90")
        q.add_argument("--out", default="-", help="output CSV (default stdout)")

    def proj_flags(q):
        q.add_argument("--eps", type=float, default=gps.DEFAULT_EPS, help="exploration radius in degrees (default 0.01)")
        q.add_argument("--dx-proj", type=float, default=gps.DEFAULT_DX_PROJ,
                       help="relative step along the segment (default 0.01)")
        q.add_argument("--averaging", choices=("occupancy", "conditional"), default="occupancy",
                       help="how the projection parts are averaged over nearby points")

    gs = gsub.add_parser("synth", help="write synthetic GPS data from the 2D telegraph model")
    gs.add_argument("--days", type=int, default=100)
    gs.add_argument("--seed", type=int, default=0)
    gs.add_argument("--origin", type=float, nargs=2, default=(7.7, 53.6), metavar=("LON", "LAT"))
    gs.add_argument("--unit", type=float, default=5000.0, help="meters per model length unit (default 5000)")
    gs.add_argument("--out", default="-")
    gs.set_defaults(func=cmd_gps_synth)

    gi = gsub.add_parser("ingest", help="regrid GPS records to daily trajectories (dataset CSV)")
    data_flags(gi)
    gi.set_defaults(func=cmd_gps_ingest)

    gp = gsub.add_parser("project", help="speed projection along a segment")
    data_flags(gp)
    proj_flags(gp)
    gp.add_argument("--segment", type=float, nargs=4, required=True, metavar=("AX", "AY", "BX", "BY"))
    gp.set_defaults(func=cmd_gps_project)

    gc = gsub.add_parser("curve", help="crossing count against distance for a segment family")
    data_flags(gc)
    proj_flags(gc)
    gc.add_argument("--direction", choices=("sea", "inland"), required=True)
    gc.add_argument("--method", default="kr,mc", help="kr, mc or both comma-separated (default kr,mc)")
    gc.add_argument("--dx", type=float, default=0.01, help="offset between family members in degrees")
    gc.add_argument("--count", type=int, default=61, help="segments per family (default 61)")
    gc.add_argument("--bw", choices=("normal_reference",), default=None)
    gc.add_argument("--step", type=float, default=0.01, help="quadrature step along segments in degrees")
    gc.set_defaults(func=cmd_gps_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pspcross: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, DegenerateSampleError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"pspcross: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"pspcross: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
