"""Discrete geodesics under a latent Riemannian metric.

A curve is a polyline of ``M + 1`` nodes at uniform parameter spacing
``1/M``.  Length uses midpoint quadrature; geodesics are found by
minimising the discrete energy ``sum_k M * d_k^T G(m_k) d_k`` over the
interior nodes, which gives constant-speed length minimisers.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import _kernels, rng
from .errors import InvalidArgumentError, SolverDivergedError
from .metric import metric_at, metric_diag_grad, metric_gradient_at

log = logging.getLogger(__name__)

INITS = ("line", "graph", "multi")


@dataclass(frozen=True)
class GeodesicOptions:
    """Solver settings.

    ``nodes`` is the starting number of segments M.  With ``refine_tol > 0``
    a solved curve is re-solved at twice the node count while evaluating it
    at double resolution changes its length by more than ``refine_tol``
    (relative), up to ``max_nodes`` segments.  Every line search starts at
    ``initial_step`` along a damped-Newton direction (see :func:`_optimize`)
    and shrinks by ``backtrack`` until the Armijo condition holds.

    ``init``: ``"line"`` starts from the straight chord, ``"graph"`` from a
    shortest path over the metric's basis points, ``"multi"`` solves from
    both the basis graph and a roadmap of ``roadmap_samples`` jittered
    copies of every basis point (offsets ``roadmap_scale * sigma``) and
    keeps the shorter curve.
    """

    nodes: int = 32
    max_iters: int = 2000
    grad_tol: float = 1e-4
    init: str = "multi"
    backtrack: float = 0.5
    initial_step: float = 1.0
    armijo: float = 1e-4
    max_backtracks: int = 40
    graph_neighbors: int = 10
    roadmap_samples: int = 4
    roadmap_scale: float = 2.0
    stall_iters: int = 50
    refine_tol: float = 2e-3
    max_nodes: int = 256
    on_failure: str = "raise"
    batch_size: int = 4096

    def __post_init__(self):
        if self.nodes < 1:
            raise InvalidArgumentError("nodes must be >= 1")
        if self.init not in INITS:
            raise InvalidArgumentError(f"init must be one of {INITS}, got {self.init!r}")
        if self.on_failure not in ("raise", "straight"):
            raise InvalidArgumentError("on_failure must be 'raise' or 'straight'")
        if not 0 < self.backtrack < 1:
            raise InvalidArgumentError("backtrack must lie in (0, 1)")
        if self.grad_tol <= 0 or self.max_iters < 0 or self.initial_step <= 0:
            raise InvalidArgumentError("grad_tol and initial_step must be > 0, max_iters >= 0")
        if self.graph_neighbors < 1 or self.batch_size < 1:
            raise InvalidArgumentError("graph_neighbors and batch_size must be >= 1")
        if self.roadmap_samples < 0 or not self.roadmap_scale > 0:
            raise InvalidArgumentError("roadmap_samples must be >= 0 and roadmap_scale > 0")
        if self.refine_tol < 0 or self.max_nodes < self.nodes:
            raise InvalidArgumentError("refine_tol must be >= 0 and max_nodes >= nodes")


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64)
        if nodes.ndim != 2 or nodes.shape[0] < 2:
            raise InvalidArgumentError("a curve needs at least two nodes (M >= 1)")
        if not np.all(np.isfinite(nodes)):
            raise InvalidArgumentError("curve nodes must be finite")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def segments(self):
        return self.nodes.shape[0] - 1

    @property
    def start(self):
        return self.nodes[0]

    @property
    def end(self):
        return self.nodes[-1]

    @classmethod
    def straight(cls, a, b, segments):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        r = np.linspace(0.0, 1.0, segments + 1)[:, None]
        nodes = (1.0 - r) * a + r * b
        nodes[-1] = b
        return cls(nodes)


@dataclass(frozen=True, eq=False)
class GeodesicResult:
    curve: DiscreteCurve
    length: float
    converged: bool
    iterations: int
    ode_residual: float
    init: str = "line"


@dataclass
class DistanceDiagnostics:
    """Per-entry solver diagnostics for :func:`distance_matrix`."""

    converged: np.ndarray
    iterations: np.ndarray
    ode_residual: np.ndarray
    init: np.ndarray
    warnings: list = field(default_factory=list)
    curves: np.ndarray | None = None

    def summary(self):
        n = int(self.converged.size)
        if n == 0:
            return {"pairs": 0}
        return {
            "pairs": n,
            "converged_fraction": float(np.mean(self.converged)),
            "mean_iterations": float(np.mean(self.iterations)),
            "max_iterations": int(np.max(self.iterations)),
            "max_ode_residual": float(np.max(self.ode_residual)),
            "graph_init_fraction": float(np.mean(self.init != "line")),
            "fallbacks": len(self.warnings),
        }


# ---------------------------------------------------------------------------
# Batched functionals.  ``nodes`` arrays are (B, M+1, K).


def _lengths(nodes, metric):
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    if metric.kind == "liv":
        return _kernels.liv_curve_lengths(nodes, metric.basis_points, metric.sigma, metric.rho)
    d = np.diff(nodes, axis=1)
    A = metric.constant_matrix()
    return np.sqrt(np.maximum(np.einsum("bmi,ij,bmj->bm", d, A, d), 0.0)).sum(axis=1)


def _energies(nodes, metric):
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    if metric.kind == "liv":
        return _kernels.liv_curve_energies(nodes, metric.basis_points, metric.sigma, metric.rho)
    M = nodes.shape[1] - 1
    d = np.diff(nodes, axis=1)
    A = metric.constant_matrix()
    return M * np.einsum("bmi,ij,bmj->b", d, A, d)


def _energy_grad(nodes, metric):
    """Energy, gradient over interior nodes, and per-segment diagonal weights."""
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    if metric.kind == "liv":
        return _kernels.liv_curve_energy_grad(nodes, metric.basis_points, metric.sigma, metric.rho)
    M = nodes.shape[1] - 1
    A = metric.constant_matrix()
    d = np.diff(nodes, axis=1)
    E = M * np.einsum("bmi,ij,bmj->b", d, A, d)
    Ad = np.einsum("ij,bmj->bmi", A, d)
    grad = 2.0 * M * (Ad[:, :-1] - Ad[:, 1:])
    gseg = np.broadcast_to(np.diag(A), d.shape).copy()
    return E, grad, gseg


def curve_length(curve, metric):
    """Midpoint-rule length ``sum_k sqrt(d_k^T G(m_k) d_k)``."""
    _check_curve_metric(curve, metric)
    return float(_lengths(curve.nodes[None], metric)[0])


def curve_energy(curve, metric):
    """``sum_k d_k^T G(m_k) d_k / (1/M)``; at least ``length**2`` by Cauchy-Schwarz."""
    _check_curve_metric(curve, metric)
    return float(_energies(curve.nodes[None], metric)[0])


def _check_curve_metric(curve, metric):
    if curve.nodes.shape[1] != metric.dim:
        raise InvalidArgumentError(
            f"curve dimension {curve.nodes.shape[1]} does not match metric dimension {metric.dim}"
        )


# ---------------------------------------------------------------------------
# Geodesic equation


def geodesic_ode_rhs(metric, gamma, gamma_dot):
    """Acceleration of a geodesic through ``gamma`` with velocity ``gamma_dot``.

    ``gamma'' = -1/2 G^{-1} [2 (I (x) gamma'^T) J gamma' - J^T (gamma' (x) gamma')]``
    with ``J = d vec(G) / d gamma`` (columns of G stacked).  The second term
    alone is the familiar ``J^T (gamma' (x) gamma')`` contraction; the first is
    the velocity transport term of the Euler-Lagrange equation.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    v = np.asarray(gamma_dot, dtype=np.float64)
    K = metric.dim
    if gamma.shape != (K,) or v.shape != (K,):
        raise InvalidArgumentError(f"gamma and gamma_dot must be vectors of length {K}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("gamma_dot must be finite")
    if metric.is_constant:
        return np.zeros(K)
    G = metric_at(metric, gamma)
    dG = metric_gradient_at(metric, gamma)  # dG[a, b, l]
    # vec stacks columns: row index a + b*K holds dG_ab
    J = dG.transpose(1, 0, 2).reshape(K * K, K)
    term_transport = 2.0 * np.kron(np.eye(K), v[None, :]) @ J @ v
    term_potential = J.T @ np.kron(v, v)
    return -0.5 * np.linalg.solve(G, term_transport - term_potential)


def _ode_rhs_batch(metric, gamma, v):
    """Vectorised right-hand side for diagonal metrics; (P, K) inputs."""
    g, dg = metric_diag_grad(metric, gamma)  # dg[p, l, j] = d g_j / d z_l
    transport = 2.0 * v * np.einsum("plj,pl->pj", dg, v)
    potential = np.einsum("pla,pa->pl", dg, v * v)
    return -0.5 * (transport - potential) / g


def _ode_residuals(nodes, metric):
    """Max-norm defect of the geodesic equation at interior nodes, per curve."""
    B, M1, K = nodes.shape
    M = M1 - 1
    if M < 2:
        return np.zeros(B)
    h = 1.0 / M
    accel = (nodes[:, 2:] - 2.0 * nodes[:, 1:-1] + nodes[:, :-2]) / (h * h)
    if metric.is_constant:
        return np.abs(accel).reshape(B, -1).max(axis=1)
    vel = (nodes[:, 2:] - nodes[:, :-2]) / (2.0 * h)
    rhs = _ode_rhs_batch(metric, nodes[:, 1:-1].reshape(-1, K), vel.reshape(-1, K))
    defect = np.abs(accel.reshape(-1, K) - rhs).reshape(B, -1)
    return defect.max(axis=1)


# ---------------------------------------------------------------------------
# Initialisation


def _straight_nodes(A, B, M):
    r = np.linspace(0.0, 1.0, M + 1)[None, :, None]
    nodes = (1.0 - r) * A[:, None, :] + r * B[:, None, :]
    nodes[:, 0] = A
    nodes[:, -1] = B
    return nodes


def _segment_lengths(P, Q, metric, pieces=4):
    """Metric length of straight segments ``P[i] -> Q[i]``.

    For the LIV metric each segment is cut into pieces no longer than
    ``sigma / 2`` (at least ``pieces``, at most 64, in powers of two).
    """
    n = P.shape[0]
    if n == 0:
        return np.zeros(0)
    if metric.kind != "liv":
        return _lengths(_straight_nodes(P, Q, pieces), metric)
    need = np.ceil(2.0 * np.linalg.norm(Q - P, axis=1) / metric.sigma)
    counts = np.clip(2 ** np.ceil(np.log2(np.maximum(need, 1.0))), pieces, 64).astype(np.int64)
    out = np.empty(n)
    for c in np.unique(counts):
        sel = counts == c
        out[sel] = _lengths(_straight_nodes(P[sel], Q[sel], int(c)), metric)
    return out


def roadmap_points(metric, samples, scale):
    """Basis points followed by ``samples`` jittered copies of each.

    Offsets are ``scale * sigma`` times standard normals from the roadmap
    stream; row ``i`` of the jitter block belongs to basis point ``i``.
    """
    basis = metric.basis_points
    if samples == 0:
        return basis
    N, K = basis.shape
    eps = rng.std_normal(rng.uniform_block(0, rng.STREAM_ROADMAP, N, samples * K))
    jitter = basis[:, None, :] + scale * metric.sigma * eps.reshape(N, samples, K)
    return np.vstack([basis, jitter.reshape(N * samples, K)])


class BasisGraph:
    """Symmetrised kNN graph over a node set (default: the metric's basis points).

    Edge weights are metric lengths of straight segments.  Endpoints are
    attached to their ``k`` nearest nodes, so the path found for a pair
    depends only on that pair, the node set and the metric.
    """

    def __init__(self, metric, n_neighbors=10, points=None):
        basis = metric.basis_points if points is None else np.ascontiguousarray(points, dtype=np.float64)
        self.metric = metric
        self.points = basis
        N = basis.shape[0]
        self.k = min(n_neighbors, N)
        self._cache = {}
        if N < 2:
            self.dist = np.zeros((N, N))
            self.pred = np.full((N, N), -9999)
            return
        kk = min(n_neighbors, N - 1)
        d2 = _sqdist(basis, basis)
        np.fill_diagonal(d2, np.inf)
        nbr = np.argsort(d2, axis=1, kind="stable")[:, :kk]
        rows = np.repeat(np.arange(N), kk)
        cols = nbr.ravel()
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
        w = _segment_lengths(basis[pairs[:, 0]], basis[pairs[:, 1]], metric)
        # csgraph drops explicit zeros; duplicate basis points get a tiny weight
        w = np.maximum(w, 1e-300)
        W = csr_matrix((w, (pairs[:, 0], pairs[:, 1])), shape=(N, N))
        self.dist, self.pred = dijkstra(W, directed=False, return_predecessors=True)

    @classmethod
    def roadmap(cls, metric, opts):
        pts = roadmap_points(metric, opts.roadmap_samples, opts.roadmap_scale)
        return cls(metric, opts.graph_neighbors + 2, pts)

    def attach(self, Z):
        """Nearest basis nodes of each endpoint and the attaching edge lengths.

        Results are cached per endpoint, since a distance matrix attaches
        every row and column point many times.
        """
        keys = [z.tobytes() for z in Z]
        first = {}
        for i, key in enumerate(keys):
            if key not in self._cache:
                first.setdefault(key, i)
        missing = list(first.values())
        if missing:
            Zm = Z[missing]
            d2 = _sqdist(Zm, self.points)
            nbr = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            P = np.repeat(Zm, self.k, axis=0)
            Q = self.points[nbr.ravel()]
            w = _segment_lengths(P, Q, self.metric).reshape(Zm.shape[0], self.k)
            radius = np.sqrt(d2[np.arange(Zm.shape[0]), nbr[:, -1]])
            for r, i in enumerate(missing):
                self._cache[keys[i]] = (nbr[r], w[r], radius[r])
        rows = [self._cache[key] for key in keys]
        nbr = np.array([r[0] for r in rows]).reshape(len(rows), self.k)
        w = np.array([r[1] for r in rows]).reshape(len(rows), self.k)
        radius = np.array([r[2] for r in rows])
        return nbr, w, radius

    def _node_path(self, p, q):
        path = [q]
        while path[-1] != p:
            prev = self.pred[p, path[-1]]
            if prev < 0:
                return None
            path.append(prev)
        return path[::-1]

    def init_nodes(self, A, B, M):
        """Graph-path initial curves; rows without a path are ``None``."""
        na, wa, ra = self.attach(A)
        nb, wb, rb = self.attach(B)
        cost = wa[:, :, None] + self.dist[na[:, :, None], nb[:, None, :]] + wb[:, None, :]
        flat = cost.reshape(cost.shape[0], -1)
        best = np.argmin(flat, axis=1)
        best_cost = flat[np.arange(flat.shape[0]), best]
        direct_ok = np.linalg.norm(A - B, axis=1) <= np.maximum(ra, rb)
        direct = _segment_lengths(A, B, self.metric)
        rows, polys = [], []
        for i in np.flatnonzero(np.isfinite(best_cost) & ~(direct_ok & (direct <= best_cost))):
            p = na[i, best[i] // self.k]
            q = nb[i, best[i] % self.k]
            nodes = self._node_path(p, q)
            if nodes is not None:
                rows.append(i)
                polys.append(nodes)
        out = [None] * A.shape[0]
        if not rows:
            return out
        # each polyline is A[i], its basis path, B[i]
        sizes = np.array([len(n) + 2 for n in polys], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        pts = np.empty((offsets[-1], A.shape[1]))
        pts[offsets[:-1]] = A[rows]
        pts[offsets[1:] - 1] = B[rows]
        inner = np.concatenate([np.arange(o + 1, o + s - 1) for o, s in zip(offsets[:-1], sizes)])
        pts[inner] = self.points[np.concatenate(polys)]
        curves, kept = _kernels.resample_polylines(pts, offsets, M)
        for r, i in enumerate(rows):
            if kept[r] > 2:
                out[i] = curves[r]
        return out


def _sqdist(P, Q):
    d2 = (P * P).sum(1)[:, None] + (Q * Q).sum(1)[None, :] - 2.0 * P @ Q.T
    return np.maximum(d2, 0.0)


# ---------------------------------------------------------------------------
# Optimisation


def _system(nodes, metric):
    """Energy, gradient, segment weights and Hessian blocks (LIV only)."""
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    return _kernels.liv_curve_newton_system(nodes, metric.basis_points, metric.sigma, metric.rho)


def _optimize(nodes, metric, opts):
    """Batched damped-Newton descent on curve energy.

    For the LIV metric each iteration solves ``(H + lam P) d = -grad`` with
    the exact block-tridiagonal energy Hessian ``H`` and the metric-weighted
    second-difference operator ``P``; ``lam`` grows when the step needs
    backtracking and shrinks after full steps, so the direction moves
    between a Newton step and a preconditioned gradient step.  Constant
    metrics use ``P`` alone.  Every step passes an Armijo backtracking
    line search.

    Returns final nodes, converged flags, iteration counts and stall flags.
    Each curve's trajectory is independent of the rest of the batch.
    """
    nodes = np.array(nodes, dtype=np.float64)
    Bn, M1, K = nodes.shape
    M = M1 - 1
    iters = np.zeros(Bn, dtype=np.int64)
    stalled = np.zeros(Bn, dtype=bool)
    if M < 2:
        return nodes, np.ones(Bn, dtype=bool), iters, stalled
    newton = metric.kind == "liv"
    if newton:
        E, grad, gseg, Hd, Ho = _system(nodes, metric)
    else:
        E, grad, gseg = _energy_grad(nodes, metric)
    gnorm = np.sqrt((grad * grad).sum(axis=2)).max(axis=1)
    _check_finite(E, gnorm, nodes)
    converged = gnorm <= opts.grad_tol
    lam = np.zeros(Bn)
    no_progress = np.zeros(Bn, dtype=np.int64)
    for _ in range(opts.max_iters):
        active = np.flatnonzero(~converged & ~stalled)
        if active.size == 0:
            break
        if newton:
            direction, slope, lam_a = _kernels.newton_direction(
                Hd[active], Ho[active], gseg[active], grad[active], lam[active]
            )
        else:
            direction, slope = _kernels.precondition(
                np.ascontiguousarray(gseg[active]), np.ascontiguousarray(grad[active])
            )
            lam_a = lam[active]
        t = np.full(active.size, opts.initial_step)
        base = nodes[active]
        E0 = E[active]
        accepted = np.zeros(active.size, dtype=bool)
        backtracked = np.zeros(active.size, dtype=bool)
        newN = np.empty_like(base)
        pending = np.arange(active.size)
        first = None
        for _bt in range(opts.max_backtracks):
            trial = base[pending].copy()
            trial[:, 1:-1] += t[pending, None, None] * direction[pending]
            if newton and _bt == 0:
                # most first trials are accepted; their system is reused below
                first = _system(trial, metric)
                Et = first[0]
            else:
                Et = _energies(trial, metric)
            ok = np.isfinite(Et) & (Et <= E0[pending] + opts.armijo * t[pending] * slope[pending])
            hit = pending[ok]
            accepted[hit] = True
            newN[hit] = trial[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            backtracked[pending] = True
            t[pending] *= opts.backtrack
        iters[active] += 1
        acc = active[accepted]
        if acc.size:
            nodes[acc] = newN[accepted]
            if newton:
                quick = accepted & ~backtracked
                q = active[quick]
                E[q], grad[q], gseg[q], Hd[q], Ho[q] = (a[quick] for a in first)
                late = active[accepted & backtracked]
                if late.size:
                    E[late], grad[late], gseg[late], Hd[late], Ho[late] = _system(nodes[late], metric)
            else:
                E[acc], grad[acc], gseg[acc] = _energy_grad(nodes[acc], metric)
        full = accepted & ~backtracked
        lam_a = np.where(full, np.where(lam_a > 1e-6, lam_a / 4.0, 0.0), lam_a)
        lam_a = np.where(accepted & backtracked, np.maximum(2.0 * lam_a, 1e-4), lam_a)
        lam_a = np.where(~accepted, np.maximum(10.0 * lam_a, 1e-2), lam_a)
        lam[active] = lam_a
        rej = active[~accepted]
        no_progress[acc] = 0
        no_progress[rej] += 1
        stalled[rej[no_progress[rej] >= opts.stall_iters]] = True
        g_acc = np.sqrt((grad[acc] * grad[acc]).sum(axis=2)).max(axis=1)
        _check_finite(E[acc], g_acc, nodes[acc])
        converged[acc] = g_acc <= opts.grad_tol
    return nodes, converged, iters, stalled


def _check_finite(E, gnorm, nodes):
    bad = ~(np.isfinite(E) & np.isfinite(gnorm))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SolverDivergedError(
            "non-finite energy or gradient during geodesic optimisation",
            trace=[{"curve": i, "energy": float(E[i]), "grad_norm": float(gnorm[i])}],
            pair=i,
        )


# graphs for the most recent metric only: a distance matrix for the test
# split usually follows one for the train split under the same metric
_GRAPH_CACHE = {"metric": None, "graphs": {}}


def _graphs(metric, opts):
    """Initialisation graphs for ``opts.init``, reused while the metric is unchanged."""
    if opts.init == "line" or metric.is_constant:
        return []
    ref = _GRAPH_CACHE["metric"]
    if ref is None or ref() is not metric:
        _GRAPH_CACHE["metric"] = weakref.ref(metric)
        _GRAPH_CACHE["graphs"] = {}
    per_metric = _GRAPH_CACHE["graphs"]
    key = (opts.init, opts.graph_neighbors, opts.roadmap_samples, opts.roadmap_scale)
    if key not in per_metric:
        graphs = [("graph", BasisGraph(metric, opts.graph_neighbors))]
        if opts.init == "multi" and opts.roadmap_samples > 0:
            graphs.append(("roadmap", BasisGraph.roadmap(metric, opts)))
        per_metric[key] = graphs
    return per_metric[key]


def _subdivide(nodes):
    """Insert segment midpoints: M segments -> 2M on the same polyline."""
    Bn, M1, K = nodes.shape
    out = np.empty((Bn, 2 * M1 - 1, K))
    out[:, ::2] = nodes
    out[:, 1::2] = 0.5 * (nodes[:, 1:] + nodes[:, :-1])
    return out


def _resolved_lengths(nodes, metric, max_halvings=3):
    """Lengths with every segment subdivided to at most ``sigma / 2``.

    Ranks unrefined candidate curves: a coarse curve can look short only
    because its midpoints skip over high-metric spots.
    """
    seg = np.sqrt((np.diff(nodes, axis=1) ** 2).sum(axis=2)).max(axis=1)
    halvings = np.clip(np.ceil(np.log2(np.maximum(2.0 * seg / metric.sigma, 1.0))), 0, max_halvings).astype(int)
    out = np.empty(nodes.shape[0])
    for h in np.unique(halvings):
        sel = halvings == h
        fine = nodes[sel]
        for _ in range(h):
            fine = _subdivide(fine)
        out[sel] = _lengths(fine, metric)
    return out


def _line_converged(line, metric, opts):
    _, g, _ = _energy_grad(line, metric)
    return np.sqrt((g * g).sum(axis=2)).max(axis=1) <= opts.grad_tol


def _residuals(curves, metric):
    out = np.zeros(len(curves))
    sizes = np.array([c.shape[0] for c in curves])
    for m in np.unique(sizes):
        sel = np.flatnonzero(sizes == m)
        out[sel] = _ode_residuals(np.stack([curves[i] for i in sel]), metric)
    return out


def _refine(curves, lengths, conv, iters, A, B, idx, metric, opts):
    """Double the node count of curves ``idx`` until their length is resolved.

    A curve is resolved when evaluating it with every segment halved changes
    its length by at most ``refine_tol``.  Unresolved curves are
    re-optimised from the subdivided polyline.  Updates the arrays in place.
    """
    if opts.refine_tol <= 0 or idx.size == 0:
        return
    sizes = np.array([curves[i].shape[0] - 1 for i in idx])
    for Mc in np.unique(sizes):
        group = idx[sizes == Mc]
        cur = np.stack([curves[i] for i in group])
        while group.size and 2 * Mc <= opts.max_nodes and Mc >= 2:
            fine = _subdivide(cur)
            need = np.abs(_lengths(fine, metric) - lengths[group]) > opts.refine_tol * lengths[group]
            group, fine = group[need], fine[need]
            if group.size == 0:
                break
            Mc *= 2
            cur, c2, it2, _ = _optimize(fine, metric, opts)
            lengths[group], conv[group] = _lengths(cur, metric), c2
            iters[group] += it2
            for k, i in enumerate(group):
                curves[i] = cur[k]


def _chord_lengths(A, B, curves, idx, metric):
    """Straight-chord lengths with the node count of each curve in ``idx``."""
    sizes = np.array([curves[i].shape[0] - 1 for i in idx], dtype=np.int64)
    out = np.empty(idx.size)
    for m in np.unique(sizes):
        sel = sizes == m
        out[sel] = _lengths(_straight_nodes(A[idx[sel]], B[idx[sel]], int(m)), metric)
    return out


def _solve_batch(A, B, metric, opts, graphs=None):
    """Solve geodesics for endpoint rows ``A[i] -> B[i]``.

    Every initial curve is optimised and refined on its own; the shortest
    result per pair is kept.  Returns a list of node arrays (node counts may
    differ after refinement), lengths, converged flags, iterations, ODE
    residuals and the initialisation that produced each curve.
    """
    M = opts.nodes
    P = A.shape[0]
    line = _straight_nodes(A, B, M)
    init = np.array(["line"] * P, dtype=object)
    if metric.is_constant:
        nodes, conv, iters, _ = _optimize(line, metric, opts)
        return list(nodes), _lengths(nodes, metric), conv, iters, _ode_residuals(nodes, metric), init

    curves = list(line)
    lengths = np.full(P, np.inf)
    conv = np.zeros(P, dtype=bool)
    iters = np.zeros(P, dtype=np.int64)
    tried_line = np.zeros(P, dtype=bool)

    def consider(start, label, idx, refine=True):
        n, c, it, st = _optimize(start, metric, opts)
        cand = list(n)
        L = _lengths(n, metric)
        iters[idx] += it
        if refine:
            cit = np.zeros(idx.size, dtype=np.int64)
            _refine(cand, L, c, cit, A[idx], B[idx], np.arange(idx.size), metric, opts)
            iters[idx] += cit
            score = L
        else:
            score = _resolved_lengths(n, metric)
        better = score < best[idx]
        for k in np.flatnonzero(better):
            curves[idx[k]] = cand[k]
        take = idx[better]
        best[take], lengths[take], conv[take] = score[better], L[better], c[better]
        init[take] = label
        if label == "line":
            tried_line[idx] = True
        return st

    best = np.full(P, np.inf)
    if graphs is None:
        graphs = _graphs(metric, opts)
    if opts.init == "line":
        stalled = consider(line, "line", np.arange(P))
        # restart curves whose line initialisation stalled from the graph path
        redo = np.flatnonzero(stalled & ~conv)
        if redo.size:
            graph = BasisGraph(metric, opts.graph_neighbors)
            cand = graph.init_nodes(A[redo], B[redo], M)
            sel = [k for k, g in enumerate(cand) if g is not None]
            if sel:
                consider(np.stack([cand[k] for k in sel]), "graph", redo[sel])
    else:
        covered = np.zeros(P, dtype=bool)
        starts = []
        for label, graph in graphs:
            cand = graph.init_nodes(A, B, M)
            # a start within sigma of an earlier one at every node shares its basin
            for prev in starts:
                for k, g in enumerate(cand):
                    if g is not None and prev[k] is not None and np.abs(g - prev[k]).max() < metric.sigma:
                        cand[k] = None
            starts.append(cand)
            sel = np.array([k for k, g in enumerate(cand) if g is not None], dtype=np.int64)
            if sel.size:
                consider(np.stack([cand[k] for k in sel]), label, sel, refine=False)
                covered[sel] = True
        if (~covered).any():
            consider(line[~covered], "line", np.flatnonzero(~covered), refine=False)
        cit = np.zeros(P, dtype=np.int64)
        _refine(curves, lengths, conv, cit, A, B, np.arange(P), metric, opts)
        iters += cit
        best = lengths.copy()

    # never report more than the straight chord at the same resolution; a
    # graph result longer than that is first retried from the line
    chord_len = _chord_lengths(A, B, curves, np.arange(P), metric)
    redo = np.flatnonzero(~tried_line & (lengths > chord_len))
    if redo.size:
        consider(line[redo], "line", redo)
        chord_len[redo] = _chord_lengths(A, B, curves, redo, metric)
    for i in np.flatnonzero(lengths > chord_len):
        c = _straight_nodes(A[i : i + 1], B[i : i + 1], curves[i].shape[0] - 1)
        curves[i] = c[0]
        lengths[i] = chord_len[i]
        init[i] = "line"
        conv[i] = _line_converged(c, metric, opts)[0]
    return curves, lengths, conv, iters, _residuals(curves, metric), init


def _as_endpoint(x, metric, name):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (metric.dim,):
        raise InvalidArgumentError(f"{name} must be a vector of length {metric.dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} must be finite")
    return x


def solve_geodesic(a, b, metric, opts=None):
    """Shortest discrete curve from ``a`` to ``b`` under ``metric``."""
    opts = opts or GeodesicOptions()
    a = _as_endpoint(a, metric, "a")
    b = _as_endpoint(b, metric, "b")
    if np.array_equal(a, b):
        nodes = np.repeat(a[None], opts.nodes + 1, axis=0)
        return GeodesicResult(DiscreteCurve(nodes), 0.0, True, 0, 0.0, "line")
    nodes, lengths, conv, iters, resid, init = _solve_batch(a[None], b[None], metric, opts)
    return GeodesicResult(
        curve=DiscreteCurve(nodes[0]),
        length=float(lengths[0]),
        converged=bool(conv[0]),
        iterations=int(iters[0]),
        ode_residual=float(resid[0]),
        init=str(init[0]),
    )


def distance_matrix(points_a, points_b, metric, opts=None, details=False, keep_curves=False):
    """Geodesic lengths between every row of ``points_a`` and of ``points_b``.

    Entry ``(i, j)`` equals ``solve_geodesic(points_a[i], points_b[j]).length``.
    With ``opts.on_failure == "straight"`` a diverged entry is replaced by
    its straight-chord length and recorded in the diagnostics' warnings.
    """
    opts = opts or GeodesicOptions()
    A = np.asarray(points_a, dtype=np.float64)
    Bp = np.asarray(points_b, dtype=np.float64)
    if A.ndim != 2 or Bp.ndim != 2 or A.shape[1] != metric.dim or Bp.shape[1] != metric.dim:
        raise InvalidArgumentError(f"points must be (n, {metric.dim}) matrices")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Bp))):
        raise InvalidArgumentError("points must be finite")
    P, Q = A.shape[0], Bp.shape[0]
    D = np.zeros((P, Q))
    conv = np.ones((P, Q), dtype=bool)
    iters = np.zeros((P, Q), dtype=np.int64)
    resid = np.zeros((P, Q))
    init = np.full((P, Q), "line", dtype=object)
    curves = np.empty((P, Q), dtype=object) if keep_curves else None
    warnings = []

    if metric.is_constant:
        # the straight chord is the geodesic; its length is exact in closed form
        diff = A[:, None, :] - Bp[None, :, :]
        Am = metric.constant_matrix()
        D = np.sqrt(np.maximum(np.einsum("pqi,ij,pqj->pq", diff, Am, diff), 0.0))
        if keep_curves:
            for i in range(P):
                for j in range(Q):
                    curves[i, j] = _straight_nodes(A[i : i + 1], Bp[j : j + 1], opts.nodes)[0]
        if not details:
            return D
        return D, DistanceDiagnostics(conv, iters, resid, init, warnings, curves)

    ii, jj = np.meshgrid(np.arange(P), np.arange(Q), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    same = np.all(A[ii] == Bp[jj], axis=1)
    todo = np.flatnonzero(~same)
    if keep_curves:
        for k in np.flatnonzero(same):
            curves[ii[k], jj[k]] = np.repeat(A[ii[k]][None], opts.nodes + 1, axis=0)

    graphs = _graphs(metric, opts) if todo.size else []
    for start in range(0, todo.size, opts.batch_size):
        chunk = todo[start : start + opts.batch_size]
        ai, bj = A[ii[chunk]], Bp[jj[chunk]]
        try:
            out = _solve_batch(ai, bj, metric, opts, graphs)
        except SolverDivergedError as exc:
            out = _solve_chunk_individually(ai, bj, metric, opts, graphs, ii[chunk], jj[chunk], exc, warnings)
        nodes, lengths, c, it, r, ini = out
        D[ii[chunk], jj[chunk]] = lengths
        conv[ii[chunk], jj[chunk]] = c
        iters[ii[chunk], jj[chunk]] = it
        resid[ii[chunk], jj[chunk]] = r
        init[ii[chunk], jj[chunk]] = ini
        if keep_curves:
            for k, idx in enumerate(chunk):
                curves[ii[idx], jj[idx]] = nodes[k]
    if not details:
        return D
    return D, DistanceDiagnostics(conv, iters, resid, init, warnings, curves)


def _solve_chunk_individually(A, B, metric, opts, graphs, rows, cols, first_exc, warnings):
    """Re-solve a failed chunk pair by pair to locate diverging entries."""
    M = opts.nodes
    P = A.shape[0]
    nodes = [None] * P
    lengths = np.empty(P)
    conv = np.zeros(P, dtype=bool)
    iters = np.zeros(P, dtype=np.int64)
    resid = np.zeros(P)
    init = np.array(["line"] * P, dtype=object)
    for k in range(P):
        try:
            n1, l1, c1, i1, r1, in1 = _solve_batch(A[k : k + 1], B[k : k + 1], metric, opts, graphs)
        except SolverDivergedError as exc:
            pair = (int(rows[k]), int(cols[k]))
            if opts.on_failure == "raise":
                raise SolverDivergedError(
                    f"geodesic solver diverged for pair {pair}", trace=exc.trace, pair=pair
                ) from exc
            line = _straight_nodes(A[k : k + 1], B[k : k + 1], M)
            n1, l1 = line, _lengths(line, metric)
            c1, i1, r1, in1 = np.zeros(1, bool), np.zeros(1, np.int64), np.full(1, np.nan), ["line"]
            warnings.append({"pair": list(pair), "message": str(exc)})
            log.warning("pair %s diverged; using straight-line length", pair)
        nodes[k], lengths[k], conv[k], iters[k], resid[k], init[k] = n1[0], l1[0], c1[0], i1[0], r1[0], in1[0]
    return nodes, lengths, conv, iters, resid, init


def with_options(opts, **changes):
    return replace(opts or GeodesicOptions(), **changes)
