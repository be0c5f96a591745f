"""Nearest-neighbour matching and treatment-effect estimates.

Matching is always with replacement.  By default it is two-sided: every
treated unit gets its closest control and every control its closest
treated unit, so the average effect runs over all N units.  Both
directions read the same treated x control distance matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import InvalidArgumentError

DISTANCE_KINDS = ("euclidean", "mahalanobis", "riemannian", "random")


@dataclass(frozen=True, eq=False)
class MatchAssignment:
    """``match_index[i]`` is the matched unit of opposite treatment (-1 if unmatched)."""

    match_index: np.ndarray
    match_distance: np.ndarray
    distance_kind: str
    space_id: str = ""

    @property
    def n(self):
        return self.match_index.shape[0]

    def to_dict(self):
        return {
            "distance_kind": self.distance_kind,
            "space_id": self.space_id,
            "match_index": self.match_index.tolist(),
            "match_distance": [None if not np.isfinite(d) else float(d) for d in self.match_distance],
        }


@dataclass(frozen=True, eq=False)
class EffectEstimate:
    ite_hat: np.ndarray
    ate_hat: float
    ate_abs_error: float | None = None
    pehe: float | None = None

    def to_dict(self):
        return {"ate_hat": self.ate_hat, "ate_abs_error": self.ate_abs_error, "pehe": self.pehe}


def _ids(ids, name):
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if ids.size == 0:
        raise InvalidArgumentError(f"{name} group is empty")
    if np.any(ids < 0):
        raise InvalidArgumentError(f"{name} ids must be non-negative")
    return ids


def _freeze(a):
    a.setflags(write=False)
    return a


def match_nn(distances, treated_ids, control_ids, n=None, distance_kind="euclidean",
             space_id="", two_sided=True):
    """Nearest-neighbour matching on a treated x control distance matrix.

    Row ``r`` of ``distances`` belongs to unit ``treated_ids[r]`` and column
    ``c`` to ``control_ids[c]``.  Ties go to the lowest column (row) position.
    With ``two_sided=False`` controls stay unmatched (index -1, distance NaN).
    """
    t_ids = _ids(treated_ids, "treated")
    c_ids = _ids(control_ids, "control")
    D = np.asarray(distances, dtype=np.float64)
    if D.shape != (t_ids.size, c_ids.size):
        raise InvalidArgumentError(
            f"distance matrix has shape {D.shape}, expected ({t_ids.size}, {c_ids.size})"
        )
    if not np.all(np.isfinite(D)):
        raise InvalidArgumentError("distance matrix must be finite")
    if np.intersect1d(t_ids, c_ids).size:
        raise InvalidArgumentError("a unit cannot be both treated and control")
    if n is None:
        n = int(max(t_ids.max(), c_ids.max())) + 1
    index = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.nan)
    # np.argmin returns the first minimum, which is the lowest-index tie-break
    col = np.argmin(D, axis=1)
    index[t_ids] = c_ids[col]
    dist[t_ids] = D[np.arange(t_ids.size), col]
    if two_sided:
        row = np.argmin(D, axis=0)
        index[c_ids] = t_ids[row]
        dist[c_ids] = D[row, np.arange(c_ids.size)]
    return MatchAssignment(_freeze(index), _freeze(dist), distance_kind, space_id)


def match_random(treated_ids, control_ids, seed, n=None, space_id="", two_sided=True):
    """Uniform matches with replacement, drawn from the random-match stream.

    Units draw in increasing id order, one uniform each.
    """
    t_ids = np.sort(_ids(treated_ids, "treated"))
    c_ids = np.sort(_ids(control_ids, "control"))
    if n is None:
        n = int(max(t_ids.max(), c_ids.max())) + 1
    units = np.sort(np.concatenate([t_ids, c_ids])) if two_sided else t_ids
    u = rng.uniforms(seed, rng.STREAM_RANDOM_MATCH, units.size)
    index = np.full(n, -1, dtype=np.int64)
    is_treated = np.isin(units, t_ids)
    for k, unit in enumerate(units):
        pool = c_ids if is_treated[k] else t_ids
        index[unit] = pool[min(int(u[k] * pool.size), pool.size - 1)]
    dist = np.where(index >= 0, 0.0, np.nan)
    return MatchAssignment(_freeze(index), _freeze(dist), "random", space_id)


def _check_assignment(dataset, assignment):
    if assignment.n != dataset.n:
        raise InvalidArgumentError(
            f"assignment covers {assignment.n} units but the dataset has {dataset.n}"
        )
    idx = assignment.match_index
    matched = np.flatnonzero(idx >= 0)
    if matched.size == 0:
        raise InvalidArgumentError("assignment matches no units")
    if np.any(idx[matched] >= dataset.n):
        raise InvalidArgumentError("match index out of range")
    t = dataset.treatment
    if np.any(t[idx[matched]] == t[matched]):
        raise InvalidArgumentError("a unit is matched to a unit with the same treatment")
    return matched


def signed_effects(dataset, assignment):
    """``Y_i - Y_match`` for treated units, ``Y_match - Y_i`` for controls (NaN if unmatched)."""
    matched = _check_assignment(dataset, assignment)
    y = dataset.outcome
    e = np.full(dataset.n, np.nan)
    j = assignment.match_index[matched]
    sign = np.where(dataset.treatment[matched] == 1, 1.0, -1.0)
    e[matched] = sign * (y[matched] - y[j])
    return e


def estimate_effects(dataset, assignment, ate_true=None):
    """ITE, ATE and, when ground truth exists, ATE error and PEHE.

    ``ate_true`` overrides the mean of ``true_ite`` (for RCT-style reference
    values).  Averages run over matched units; with one-sided matching that
    is the treated group.
    """
    e = signed_effects(dataset, assignment)
    matched = np.isfinite(e)
    ate_hat = float(np.mean(e[matched]))
    if ate_true is None and dataset.true_ite is not None:
        ate_true = float(np.mean(dataset.true_ite[matched]))
    ate_err = None if ate_true is None else abs(ate_hat - float(ate_true))
    pehe = None
    if dataset.true_ite is not None:
        pehe = float(np.sqrt(np.mean((e[matched] - dataset.true_ite[matched]) ** 2)))
    return EffectEstimate(_freeze(e), ate_hat, ate_err, pehe)


def extrapolation_bias(dataset, assignment):
    """``|mu0(self) - mu0(match)|`` for treated units; NaN elsewhere.

    Uses the stored noiseless control response ``mu0``.
    """
    if dataset.mu0 is None:
        raise InvalidArgumentError("extrapolation bias needs the noiseless mu0 response")
    matched = _check_assignment(dataset, assignment)
    out = np.full(dataset.n, np.nan)
    treated = matched[dataset.treatment[matched] == 1]
    out[treated] = np.abs(dataset.mu0[treated] - dataset.mu0[assignment.match_index[treated]])
    return out


def mean_extrapolation_bias(dataset, assignment):
    b = extrapolation_bias(dataset, assignment)
    b = b[np.isfinite(b)]
    return float(np.mean(b)) if b.size else float("nan")


def save_pairs_csv(assignment, path, unit_ids=None):
    """Write ``unit_id,match_id,distance`` rows for every matched unit."""
    ids = np.arange(assignment.n) if unit_ids is None else np.asarray(unit_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "match_id", "distance"])
        for i in range(assignment.n):
            j = assignment.match_index[i]
            if j < 0:
                continue
            w.writerow([int(ids[i]), int(ids[j]), repr(float(assignment.match_distance[i]))])
