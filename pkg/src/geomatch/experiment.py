"""Seed sweeps, sigma selection and reporting.

For every seed: build the dataset, split it, fit each latent space on the
train split, then for every distance (and every sigma for the Riemannian
distance) match within the train split and within the test split and
record the effect errors.  Test-split units are projected with the space
fitted on train and matched under the metric fitted on train.  The sigma
(and K) of each method is chosen per seed by the train-split criterion.

Reports hold no timings, so equal configs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.spatial.distance import pdist

from . import geodesic
from .causal import estimate_effects, match_nn, match_random, mean_extrapolation_bias
from .config import ExperimentConfig, with_dataset
from .data import SplitSpec, generate_swissroll, generate_ustrip, load_csv, split
from .errors import GeoMatchError
from .manifold import fit_space
from .metric import euclidean_metric, liv_metric, mahalanobis_metric

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_METRICS = ("ate_hat", "ate_abs_error", "pehe", "mean_bias")


def make_dataset(spec, seed):
    if spec.kind == "swissroll":
        return generate_swissroll(spec.n, spec.ambient_dim, spec.sigma_x, spec.sigma_y, seed=seed)
    if spec.kind == "ustrip":
        return generate_ustrip(
            spec.n, spec.ambient_dim, spec.sigma_x, spec.sigma_y,
            sigmoid_k=spec.sigmoid_k, sigmoid_z0=spec.sigmoid_z0, seed=seed,
        )
    return load_csv(spec.path)


def median_pairwise_distance(Z):
    d = pdist(Z)
    return float(np.median(d)) if d.size else 1.0


def sigma_grid(config, Z):
    """``(factor, sigma)`` pairs for a latent training matrix."""
    if config.sigma_scale == "absolute":
        return [(None, s) for s in config.sigma_factors]
    scale = median_pairwise_distance(Z)
    if scale <= 0:
        scale = 1.0
    return [(f, f * scale) for f in config.sigma_factors]


def build_metric(distance, Z_train, sigma=None, config=None):
    K = Z_train.shape[1]
    if distance == "euclidean":
        return euclidean_metric(K)
    if distance == "mahalanobis":
        return mahalanobis_metric(points=Z_train)
    if distance == "riemannian":
        max_basis = config.max_basis or None if config else None
        return liv_metric(Z_train, sigma, rho=config.rho, max_basis=max_basis)
    raise ValueError(distance)


def _evaluate(ds, Z, distance, metric, opts, seed, config):
    """Match within one split and score it."""
    t, c = ds.treated, ds.control
    if distance == "random":
        m = match_random(t, c, seed, n=ds.n, two_sided=config.two_sided)
        diag = None
    else:
        D, diag = geodesic.distance_matrix(Z[t], Z[c], metric, opts, details=True)
        m = match_nn(D, t, c, n=ds.n, distance_kind=distance, two_sided=config.two_sided)
    ate_true = config.dataset.ate_true
    est = estimate_effects(ds, m, ate_true=ate_true)
    out = {
        "ate_hat": est.ate_hat,
        "ate_abs_error": est.ate_abs_error,
        "pehe": est.pehe,
        "mean_bias": mean_extrapolation_bias(ds, m) if ds.mu0 is not None else None,
    }
    summary = None
    if diag is not None:
        summary = diag.summary()
        summary["warnings"] = diag.warnings
    return out, summary, m


def _blank_row(seed, space, distance, factor, sigma):
    return {
        "seed": seed,
        "space": space.key,
        "method": space.method,
        "k": space.k,
        "distance": distance,
        "sigma_factor": factor,
        "sigma": sigma,
        "train": None,
        "test": None,
        "diagnostics": None,
        "metric": None,
        "selected": False,
        "error": None,
    }


def _selection_key(row, criterion):
    value = row["train"][criterion] if row["train"] else None
    value = math.inf if value is None or not math.isfinite(value) else value
    sigma = row["sigma"] if row["sigma"] is not None else -math.inf
    k = row["k"] if row["k"] is not None else -1
    return (value, sigma, k)


def select_rows(rows, criterion="ate_abs_error"):
    """Mark the best train row per (seed, method, distance); ties -> smallest sigma, then K."""
    groups = {}
    for r in rows:
        if r["error"] is None:
            groups.setdefault((r["seed"], r["method"], r["distance"]), []).append(r)
    for group in groups.values():
        best = min(group, key=lambda r: _selection_key(r, criterion))
        best["selected"] = True
    return rows


def run_seed(config, seed, plot_dir=None):
    """All rows for one seed (selection already applied)."""
    t0 = time.perf_counter()
    opts = config.geodesic
    rows = []
    try:
        dataset = make_dataset(config.dataset, seed)
        train, test = split(dataset, SplitSpec(config.train_fraction, seed))
    except GeoMatchError as exc:
        if config.fail_fast:
            raise
        for space in config.spaces:
            for distance in config.space_distances(space):
                row = _blank_row(seed, space, distance, None, None)
                row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
        return rows
    plot_inputs = {}
    for space in config.spaces:
        try:
            fitted = fit_space(space.method, train.covariates, space.k, space.n_neighbors)
            Z_tr = fitted.train_latent
            Z_te = fitted.project(test.covariates)
        except GeoMatchError as exc:
            if config.fail_fast:
                raise
            for distance in config.space_distances(space):
                row = _blank_row(seed, space, distance, None, None)
                row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
            continue
        for distance in config.space_distances(space):
            grid = sigma_grid(config, Z_tr) if distance == "riemannian" else [(None, None)]
            for factor, sigma in grid:
                row = _blank_row(seed, space, distance, factor, sigma)
                try:
                    metric = None if distance == "random" else build_metric(distance, Z_tr, sigma, config)
                    tr, tr_diag, m_tr = _evaluate(train, Z_tr, distance, metric, opts, seed, config)
                    te, te_diag, _ = _evaluate(test, Z_te, distance, metric, opts, seed, config)
                    row["train"], row["test"] = tr, te
                    if tr_diag is not None:
                        row["diagnostics"] = {"train": tr_diag, "test": te_diag}
                    if metric is not None:
                        row["metric"] = metric.to_dict()
                    plot_inputs[(space.key, distance, sigma)] = (Z_tr, metric, m_tr)
                except GeoMatchError as exc:
                    if config.fail_fast:
                        raise
                    row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
                log.info(
                    "cell seed=%d space=%s distance=%s sigma=%s phase=done elapsed=%.1fs",
                    seed, space.key, distance, "-" if sigma is None else f"{sigma:.4g}",
                    time.perf_counter() - t0,
                )
    criterion = "pehe" if config.selection == "pehe" else "ate_abs_error"
    select_rows(rows, criterion)
    if plot_dir is not None:
        from .plotting import emit_plots

        for r in rows:
            if not r["selected"] or r["distance"] == "random":
                continue
            Z_tr, metric, m_tr = plot_inputs[(r["space"], r["distance"], r["sigma"])]
            emit_plots(
                Z_tr, train.treatment, metric, m_tr, plot_dir,
                f"{seed}_{r['space']}_{r['distance']}.svg", opts=opts,
                title=f"seed {seed}, {r['space']}, {r['distance']}"
                + ("" if r["sigma"] is None else f", sigma={r['sigma']:.4g}"),
            )
    return rows


def _run_seed_job(args):
    config, seed, plot_dir = args
    return run_seed(config, seed, plot_dir)


def _stats(values):
    v = np.array([x for x in values if x is not None and math.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(np.mean(v)), "std": std, "n": int(v.size)}


def aggregate(rows, keys):
    """Mean and sample std (ddof=1) of every metric across seeds per ``keys`` group."""
    groups = {}
    for r in rows:
        if r["error"] is None:
            groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key in sorted(groups, key=_sort_tuple):
        group = groups[key]
        entry = dict(zip(keys, key))
        for split_name in ("train", "test"):
            for metric in _METRICS:
                entry[f"{split_name}_{metric}"] = _stats([g[split_name][metric] for g in group])
        out.append(entry)
    return out


def _sort_tuple(t):
    return tuple((0, "") if v is None else (1, v) if isinstance(v, str) else (2, v) for v in t)


def _row_order(config):
    space_pos = {s.key: i for i, s in enumerate(config.spaces)}
    dist_pos = {d: i for i, d in enumerate(config.distance_order())}
    return lambda r: (
        r["seed"], space_pos[r["space"]], dist_pos[r["distance"]],
        -math.inf if r["sigma"] is None else r["sigma"],
    )


def run_experiment(config: ExperimentConfig, plot_dir=None):
    """Run every seed and assemble the report dictionary."""
    jobs = [(config, s, plot_dir) for s in config.seeds]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(jobs))) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]
    rows = sorted((r for res in results for r in res), key=_row_order(config))
    selected = [r for r in rows if r["selected"]]
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "rows": rows,
        "aggregates": {
            "selected": aggregate(selected, ("method", "distance")),
            "cells": aggregate(rows, ("space", "distance", "sigma_factor")),
        },
        "errors": [
            {"seed": r["seed"], "space": r["space"], "distance": r["distance"], "error": r["error"]}
            for r in rows if r["error"] is not None
        ],
    }


def selected_mean(report, method, distance, split_name="test", metric="ate_abs_error"):
    """Mean over seeds of a metric for the selected model of one method."""
    for entry in report["aggregates"]["selected"]:
        if entry["method"] == method and entry["distance"] == distance:
            return entry[f"{split_name}_{metric}"]["mean"]
    return None


def dimensionality_sweep(config, dims, plot_dir=None):
    """One :func:`run_experiment` per ambient dimension, plus a D-indexed table."""
    dims = [int(d) for d in dims]
    reports = {}
    for D in dims:
        cfg = with_dataset(config, ambient_dim=D)
        reports[D] = run_experiment(cfg, plot_dir=None if plot_dir is None else os.path.join(plot_dir, f"D{D}"))
        log.info("sweep dim=%d phase=done", D)
    table = []
    methods = sorted({(e["method"], e["distance"]) for rep in reports.values() for e in rep["aggregates"]["selected"]})
    for method, distance in methods:
        for D in dims:
            for entry in reports[D]["aggregates"]["selected"]:
                if entry["method"] == method and entry["distance"] == distance:
                    table.append({
                        "dim": D, "method": method, "distance": distance,
                        "test_ate_abs_error": entry["test_ate_abs_error"],
                        "test_pehe": entry["test_pehe"],
                    })
    trends = []
    for method, distance in methods:
        pts = [(t["dim"], t["test_ate_abs_error"]["mean"]) for t in table
               if t["method"] == method and t["distance"] == distance and t["test_ate_abs_error"]["mean"] is not None]
        trends.append({"method": method, "distance": distance, "spearman": _spearman(pts)})
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "dims": dims,
        "summary": table,
        "trends": trends,
        "reports": {str(D): reports[D] for D in dims},
    }


def _spearman(pts):
    if len(pts) < 2:
        return None
    from scipy.stats import spearmanr

    x, y = zip(*pts)
    rho = spearmanr(x, y).statistic
    return None if not np.isfinite(rho) else float(rho)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_json(report):
    """Canonical serialisation: sorted keys, NaN/inf as null."""
    return json.dumps(_clean(report), sort_keys=True, indent=1, allow_nan=False) + "\n"


SUMMARY_COLUMNS = (
    "seed", "space", "method", "k", "distance", "sigma_factor", "sigma", "selected",
    "train_ate_hat", "train_ate_abs_error", "train_pehe", "train_mean_bias",
    "test_ate_hat", "test_ate_abs_error", "test_pehe", "test_mean_bias",
    "train_converged_fraction", "test_converged_fraction", "error",
)


def summary_rows(report):
    out = []
    for r in report["rows"]:
        row = {k: r.get(k) for k in ("seed", "space", "method", "k", "distance", "sigma_factor", "sigma", "selected", "error")}
        for split_name in ("train", "test"):
            for metric in _METRICS:
                row[f"{split_name}_{metric}"] = r[split_name][metric] if r[split_name] else None
            diag = (r["diagnostics"] or {}).get(split_name) or {}
            row[f"{split_name}_converged_fraction"] = diag.get("converged_fraction")
        out.append(row)
    return out


def write_report(report, outdir, stem="report"):
    """Write ``{stem}.json`` and, for single experiments, ``{stem}.csv``."""
    os.makedirs(outdir, exist_ok=True)
    paths = [os.path.join(outdir, f"{stem}.json")]
    with open(paths[0], "w", encoding="utf-8") as fh:
        fh.write(report_json(report))
    if "rows" in report:
        paths.append(os.path.join(outdir, f"{stem}.csv"))
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in summary_rows(report):
                w.writerow({k: _csv_value(v) for k, v in row.items()})
    return paths


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return v
