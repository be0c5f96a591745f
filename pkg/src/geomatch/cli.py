"""Command-line front end: generate, fit, match, evaluate, sweep, plot.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
solver failure.  Every result is written to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import data, experiment, geodesic, manifold
from .causal import (
    MatchAssignment,
    estimate_effects,
    extrapolation_bias,
    match_nn,
    match_random,
    save_pairs_csv,
)
from .errors import GeoMatchError, InvalidArgumentError, SchemaError, SolverDivergedError
from .metric import DEFAULT_RHO

log = logging.getLogger("geomatch")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _DefaultsFormatter(argparse.HelpFormatter):
    """Append ``(default: ...)`` to optional flags whose help does not state one."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.required or "default" in text or action.default is argparse.SUPPRESS:
            return text
        if action.option_strings or action.nargs in (argparse.OPTIONAL, argparse.ZERO_OR_MORE):
            text += " (default: %(default)s)"
        return text.strip()


def _fmt():
    return _DefaultsFormatter


def _add_common(p):
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="progress lines (-vv for debug)")


def _csv_ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser():
    parser = _Parser(prog="geomatch", description=__doc__, formatter_class=_fmt())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV", formatter_class=_fmt())
    p.add_argument("--kind", choices=["swissroll", "ustrip", "semisynthetic"], default="swissroll",
                   help="generator")
    p.add_argument("--n", type=int, default=200, help="number of units")
    p.add_argument("--dim", type=int, default=None,
                   help="ambient dimension D (default 3 for swissroll, 2 for ustrip)")
    p.add_argument("--sigma-x", type=float, default=data.DEFAULT_SIGMA_X,
                   help="covariate noise scale")
    p.add_argument("--sigma-y", type=float, default=data.DEFAULT_SIGMA_Y,
                   help="outcome noise scale")
    p.add_argument("--sigmoid-k", type=float, default=1.0, help="ustrip propensity slope")
    p.add_argument("--sigmoid-z0", type=float, default=math.pi, help="ustrip propensity midpoint")
    p.add_argument("--input", default=None,
                   help="semisynthetic: CSV with x0.. covariate columns and an r column (default: none)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output CSV path")
    _add_common(p)

    p = sub.add_parser("fit", help="fit a latent space and save it as JSON", formatter_class=_fmt())
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--method", choices=list(manifold.METHODS), default="pca",
                   help="latent space method")
    p.add_argument("--k", type=int, default=2, help="latent dimension (ignored for identity)")
    p.add_argument("--n-neighbors", type=int, default=manifold.DEFAULT_NEIGHBORS,
                   help="isomap neighbours")
    p.add_argument("--out", required=True, help="output JSON path")
    _add_common(p)

    p = sub.add_parser("match", help="match units in a fitted latent space", formatter_class=_fmt())
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--space", required=True, help="latent space JSON from 'fit'")
    p.add_argument("--distance", choices=list(cfgmod.DISTANCES), default="riemannian",
                   help="matching distance")
    p.add_argument("--sigma", type=float, default=None,
                   help="LIV bandwidth (default: 0.5 x median pairwise latent distance)")
    p.add_argument("--rho", type=float, default=DEFAULT_RHO, help="LIV regulariser")
    p.add_argument("--seed", type=int, default=0, help="seed for random matching")
    p.add_argument("--one-sided", action="store_true", help="match treated units only")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="geodesic option override, e.g. nodes=64; repeatable (default: none)")
    p.add_argument("--out", required=True, help="output pairs CSV (unit_id,match_id,distance)")
    _add_common(p)

    p = sub.add_parser("evaluate", help="effect estimates for a matched dataset", formatter_class=_fmt())
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--pairs", required=True, help="pairs CSV from 'match'")
    p.add_argument("--ate-true", type=float, default=None,
                   help="reference ATE (default: mean of the true ITE column)")
    p.add_argument("--out", required=True, help="output JSON path")
    _add_common(p)

    p = sub.add_parser("sweep", help="run an experiment config (optionally over dimensions)",
                       formatter_class=_fmt())
    _add_config_flags(p)
    p.add_argument("--dims", type=_csv_ints, default=None,
                   help="ambient dimensions, e.g. 3,10,25,100 (default: one run at dataset.ambient_dim)")
    _add_common(p)

    p = sub.add_parser("plot", help="emit SVG plots for one seed of a config", formatter_class=_fmt())
    _add_config_flags(p)
    _add_common(p)
    return parser


def _add_config_flags(p):
    p.add_argument("--config", required=True, help="experiment TOML file")
    p.add_argument("--seeds", type=_csv_ints, default=None,
                   help="override experiment.seeds (default: from the config)")
    p.add_argument("--jobs", type=int, default=None,
                   help="override experiment.jobs (default: from the config)")
    p.add_argument("--out-dir", default=None,
                   help="override experiment.output_dir (default: from the config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key, e.g. dataset.n=300; repeatable (default: none)")


def _load_config(args):
    overrides = list(args.overrides)
    if args.seeds is not None:
        overrides.append(f"experiment.seeds={args.seeds}")
    if args.jobs is not None:
        overrides.append(f"experiment.jobs={args.jobs}")
    if args.out_dir is not None:
        overrides.append(f"experiment.output_dir={json.dumps(args.out_dir)}")
    return cfgmod.load_config(args.config, overrides)


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_generate(args):
    if args.kind == "swissroll":
        ds = data.generate_swissroll(args.n, args.dim or 3, args.sigma_x, args.sigma_y, seed=args.seed)
    elif args.kind == "ustrip":
        ds = data.generate_ustrip(args.n, args.dim or 2, args.sigma_x, args.sigma_y,
                                  sigmoid_k=args.sigmoid_k, sigmoid_z0=args.sigmoid_z0, seed=args.seed)
    else:
        if not args.input:
            raise InvalidArgumentError("--kind semisynthetic needs --input")
        X, r = _read_covariates(args.input)
        ds = data.assign_semisynthetic(X, r, args.sigma_y, seed=args.seed)
    _ensure_parent(args.out)
    data.save_csv(ds, args.out)
    log.info("wrote %s (%d units, D=%d)", args.out, ds.n, ds.dim)


def _read_covariates(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError as exc:
        raise InvalidArgumentError(f"input file not found: {path}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "r" not in header:
            raise SchemaError(f"{path}: needs a header with x0.. columns and an r column")
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        if not xcols:
            raise SchemaError(f"{path}: no x0.. covariate columns")
        rcol = header.index("r")
        rows = list(reader)
    try:
        X = np.array([[float(row[i]) for i in xcols] for row in rows])
        r = np.array([float(row[rcol]) for row in rows])
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return X, r


def _load_data(path):
    if not os.path.exists(path):
        raise InvalidArgumentError(f"data file not found: {path}")
    return data.load_csv(path)


def _load_space(path):
    if not os.path.exists(path):
        raise InvalidArgumentError(f"latent space file not found: {path}")
    try:
        return manifold.load_json(path)
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: not a latent space document ({exc})") from exc


def cmd_fit(args):
    ds = _load_data(args.data)
    k = None if args.method == "identity" else args.k
    space = manifold.fit_space(args.method, ds.covariates, k, args.n_neighbors)
    _ensure_parent(args.out)
    manifold.save_json(space, args.out)
    log.info("wrote %s (%s, K=%d)", args.out, space.method, space.latent_dim)


def cmd_match(args):
    ds = _load_data(args.data)
    space = _load_space(args.space)
    Z = space.project(ds.covariates)
    doc = {}
    for item in args.overrides:
        cfgmod.apply_override(doc, f"geodesic.{item}")
    opts = geodesic.GeodesicOptions(**doc.get("geodesic", {}))
    t, c = ds.treated, ds.control
    if args.distance == "random":
        m = match_random(t, c, args.seed, n=ds.n, two_sided=not args.one_sided)
    else:
        sigma = args.sigma
        if args.distance == "riemannian" and sigma is None:
            sigma = 0.5 * experiment.median_pairwise_distance(space.train_latent)
        cfg = cfgmod.ExperimentConfig(rho=args.rho, seeds=(0,))
        metric = experiment.build_metric(args.distance, space.train_latent, sigma, cfg)
        D, diag = geodesic.distance_matrix(Z[t], Z[c], metric, opts, details=True)
        m = match_nn(D, t, c, n=ds.n, distance_kind=args.distance, two_sided=not args.one_sided)
        log.info("solver: %s", diag.summary())
    _ensure_parent(args.out)
    save_pairs_csv(m, args.out)
    log.info("wrote %s", args.out)


def _read_pairs(path, n):
    if not os.path.exists(path):
        raise InvalidArgumentError(f"pairs file not found: {path}")
    index = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["unit_id", "match_id", "distance"]:
            raise SchemaError(f"{path}: header must be unit_id,match_id,distance")
        for line, row in enumerate(reader, start=2):
            try:
                i, j, d = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}: line {line}: {exc}") from exc
            if not (0 <= i < n and 0 <= j < n):
                raise SchemaError(f"{path}: line {line}: unit id out of range for {n} units")
            index[i], dist[i] = j, d
    index.setflags(write=False)
    dist.setflags(write=False)
    return MatchAssignment(index, dist, "unknown")


def cmd_evaluate(args):
    ds = _load_data(args.data)
    m = _read_pairs(args.pairs, ds.n)
    est = estimate_effects(ds, m, ate_true=args.ate_true)
    out = est.to_dict()
    out["n_matched"] = int(np.sum(m.match_index >= 0))
    if ds.mu0 is not None:
        b = extrapolation_bias(ds, m)
        out["mean_extrapolation_bias"] = float(np.nanmean(b)) if np.isfinite(b).any() else None
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(experiment.report_json(out))
    log.info("wrote %s", args.out)


def cmd_sweep(args):
    config = _load_config(args)
    plot_dir = os.path.join(config.output_dir, "plots") if config.plots else None
    if args.dims:
        report = experiment.dimensionality_sweep(config, args.dims, plot_dir=plot_dir)
        paths = experiment.write_report(report, config.output_dir, stem="sweep")
    else:
        report = experiment.run_experiment(config, plot_dir=plot_dir)
        paths = experiment.write_report(report, config.output_dir)
    for p in paths:
        log.info("wrote %s", p)
    if report.get("errors"):
        log.warning("%d cells failed; see the report's errors list", len(report["errors"]))


def cmd_plot(args):
    config = _load_config(args)
    plot_dir = os.path.join(config.output_dir, "plots")
    for seed in config.seeds:
        experiment.run_seed(config, seed, plot_dir=plot_dir)
    log.info("plots in %s", plot_dir)


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "match": cmd_match,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except SolverDivergedError as exc:
        print(f"geomatch: solver failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        # InvalidArgumentError, SchemaError and friends are ValueErrors
        print(f"geomatch: error: {exc}", file=sys.stderr)
        return 1
    except GeoMatchError as exc:
        print(f"geomatch: runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
