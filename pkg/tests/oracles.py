"""Independent reference computations shared by the tests."""

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from geomatch.metric import metric_diag

# lattice steps with |offset| <= 3: 16 directions, 32 neighbours undirected
OFFSETS = [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1),
           (1, 3), (3, 1), (1, -3), (3, -1), (2, 3), (3, 2), (2, -3), (3, -2)]


def edge_lengths(P, Q, metric, pieces=8, chunk=200_000):
    """Midpoint-rule length of straight edges P -> Q with ``pieces`` sub-steps."""
    out = np.zeros(P.shape[0])
    r = (np.arange(pieces) + 0.5) / pieces
    for s in range(0, P.shape[0], chunk):
        p, q = P[s : s + chunk], Q[s : s + chunk]
        d = (q - p) / pieces
        mids = (p[:, None, :] + r[None, :, None] * (q - p)[:, None, :]).reshape(-1, p.shape[1])
        g = metric_diag(metric, mids).reshape(p.shape[0], pieces, -1)
        out[s : s + chunk] = np.sqrt((g * d[:, None, :] ** 2).sum(axis=2)).sum(axis=1)
    return out


def lattice_distances(metric, starts, ends, lo, hi, n=200, attach=3.5, paths=False):
    """Shortest-path lengths from ``starts[k]`` to ``ends[k]`` on an n x n lattice.

    Lattice nodes are joined to their 32 neighbours; every endpoint is joined
    to all lattice nodes and other endpoints within ``attach`` cells.
    """
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    idx = np.arange(n * n).reshape(n, n)
    rows, cols = [], []
    for di, dj in OFFSETS:
        i0, i1 = max(0, -di), n - max(0, di)
        j0, j1 = max(0, -dj), n - max(0, dj)
        rows.append(idx[i0:i1, j0:j1].ravel())
        cols.append(idx[i0 + di : i1 + di, j0 + dj : j1 + dj].ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    ends_all = np.vstack([starts, ends])
    nodes = np.vstack([grid, ends_all])
    radius = attach * max((hi[0] - lo[0]) / (n - 1), (hi[1] - lo[1]) / (n - 1))
    er, ec = [], []
    for e, z in enumerate(ends_all):
        near = np.flatnonzero(np.linalg.norm(nodes - z, axis=1) <= radius)
        near = near[near != n * n + e]
        er.append(np.full(near.size, n * n + e))
        ec.append(near)
    rows = np.concatenate([rows] + er)
    cols = np.concatenate([cols] + ec)
    w = edge_lengths(nodes[rows], nodes[cols], metric)
    # coincident endpoints would give zero-weight edges, which csgraph drops
    w = np.maximum(w, 1e-300)
    W = csr_matrix((w, (rows, cols)), shape=(nodes.shape[0],) * 2)
    m = starts.shape[0]
    out = dijkstra(W, directed=False, indices=n * n + np.arange(m), return_predecessors=paths)
    dist, pred = (out if paths else (out, None))
    target = n * n + m + np.arange(m)
    lengths = dist[np.arange(m), target]
    if not paths:
        return lengths
    polylines = []
    for k in range(m):
        walk = [target[k]]
        while walk[-1] != n * n + k:
            walk.append(pred[k, walk[-1]])
        polylines.append(nodes[walk[::-1]])
    return lengths, polylines


def brute_force_match(D, treated_ids, control_ids, n):
    """Exhaustive nearest neighbour in both directions, lowest index on ties."""
    index = [-1] * n
    for r, i in enumerate(treated_ids):
        best = None
        for c, j in enumerate(control_ids):
            if best is None or D[r][c] < D[r][best]:
                best = c
        index[i] = int(control_ids[best])
    for c, j in enumerate(control_ids):
        best = None
        for r, i in enumerate(treated_ids):
            if best is None or D[r][c] < D[best][c]:
                best = r
        index[j] = int(treated_ids[best])
    return index


def direct_effects(y, t, match, true_ite=None):
    """Signed matched differences and their mean, written out term by term."""
    total = 0.0
    count = 0
    ite = []
    for i in range(len(y)):
        j = match[i]
        if j < 0:
            ite.append(float("nan"))
            continue
        e = (y[i] - y[j]) if t[i] == 1 else (y[j] - y[i])
        ite.append(e)
        total += e
        count += 1
    ate = total / count
    if true_ite is None:
        return ite, ate, None, None
    used = [i for i in range(len(y)) if match[i] >= 0]
    ate_true = sum(true_ite[i] for i in used) / len(used)
    pehe = (sum((ite[i] - true_ite[i]) ** 2 for i in used) / len(used)) ** 0.5
    return ite, ate, abs(ate - ate_true), pehe


def random_instance(r, n_max=12):
    """Random small matching problem with both groups non-empty."""
    n = int(r.integers(2, n_max + 1))
    t = np.zeros(n, dtype=np.int64)
    t[r.choice(n, int(r.integers(1, n)), replace=False)] = 1
    treated, control = np.flatnonzero(t == 1), np.flatnonzero(t == 0)
    # integer-valued distances make ties common
    if r.uniform() < 0.5:
        D = r.integers(0, 4, size=(treated.size, control.size)).astype(np.float64)
    else:
        D = r.uniform(0, 1, size=(treated.size, control.size))
    return n, t, treated, control, D
