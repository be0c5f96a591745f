"""Latent spaces: PCA, Isomap and the identity map.

Eigenvectors follow one sign convention everywhere: the entry of largest
magnitude is positive (the first such entry on exact ties).  This makes
repeated fits on the same input bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import DisconnectedGraphError, InvalidArgumentError

METHODS = ("identity", "pca", "isomap")
DEFAULT_NEIGHBORS = 10
# eigenvalues below this fraction of the largest are treated as zero
_RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class LatentSpace:
    """A fitted map from covariates (D columns) to K latent coordinates.

    ``state`` holds the method-specific parameters:

    * pca: ``mean`` (D,), ``components`` (K, D) orthonormal rows and
      ``explained_variance`` (K,), non-increasing;
    * isomap: ``train_points`` (N, D), ``n_neighbors``, ``edges`` (E, 2),
      ``edge_weights`` (E,), ``geodesic`` (N, N) graph distances,
      ``eigenvalues`` (K,) and ``eigenvectors`` (N, K);
    * identity: nothing.
    """

    method: str
    latent_dim: int
    input_dim: int
    train_latent: np.ndarray
    state: dict

    def project(self, points):
        return project(self, points)

    def to_dict(self):
        out = {
            "method": self.method,
            "latent_dim": self.latent_dim,
            "input_dim": self.input_dim,
            "train_latent": self.train_latent.tolist(),
        }
        out["state"] = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.state.items()
        }
        return out

    @classmethod
    def from_dict(cls, doc):
        method = doc["method"]
        if method not in METHODS:
            raise InvalidArgumentError(f"unknown latent space method {method!r}")
        state = {}
        for k, v in doc.get("state", {}).items():
            if k == "n_neighbors":
                state[k] = int(v)
            elif k == "edges":
                state[k] = _frozen(np.asarray(v, dtype=np.int64).reshape(-1, 2))
            else:
                state[k] = _frozen(np.asarray(v, dtype=np.float64))
        K = int(doc["latent_dim"])
        Z = np.asarray(doc["train_latent"], dtype=np.float64).reshape(-1, K)
        return cls(method, K, int(doc["input_dim"]), _frozen(Z), state)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def save_json(space, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return LatentSpace.from_dict(json.load(fh))


def _as_matrix(X, name="covariates"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty N x D matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError(f"{name} must be finite")
    return X


def _fix_signs(vectors):
    """Flip columns so the largest-magnitude entry (first on ties) is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _top_eigh(A, k):
    """Top-k eigenpairs of a symmetric matrix, eigenvalues descending."""
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def fit_identity(covariates):
    X = _as_matrix(covariates)
    return LatentSpace("identity", X.shape[1], X.shape[1], _frozen(X.copy()), {})


def fit_pca(covariates, k):
    """Project centred data on its top-``k`` principal directions."""
    X = _as_matrix(covariates)
    N, D = X.shape
    if not 1 <= k <= min(N - 1, D):
        raise InvalidArgumentError(f"k must lie in [1, {min(N - 1, D)}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (N - 1)
    w, V = _top_eigh(cov, k)
    tol = _RANK_RTOL * max(w[0], 0.0)
    rank = int(np.sum(w > tol)) if w[0] > 0 else 0
    if rank < k:
        raise InvalidArgumentError(
            f"data has rank {rank} (nonzero principal variances); cannot fit k={k}"
        )
    components = _fix_signs(V[:, :k]).T
    Z = Xc @ components.T
    state = {
        "mean": _frozen(mean),
        "components": _frozen(components),
        "explained_variance": _frozen(w[:k].copy()),
    }
    return LatentSpace("pca", int(k), D, _frozen(Z), state)


def knn_graph(X, n_neighbors):
    """Symmetrised kNN graph with Euclidean edge lengths.

    Returns unique undirected edges ``(i, j)`` with ``i < j`` and their weights.
    """
    N = X.shape[0]
    kk = min(n_neighbors, N - 1)
    d2 = np.maximum((X * X).sum(1)[:, None] + (X * X).sum(1)[None, :] - 2.0 * X @ X.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    nbr = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    rows = np.repeat(np.arange(N), kk)
    cols = nbr.ravel()
    edges = np.unique(np.stack([np.minimum(rows, cols), np.maximum(rows, cols)], axis=1), axis=0)
    weights = np.linalg.norm(X[edges[:, 0]] - X[edges[:, 1]], axis=1)
    return edges, weights


def graph_distances(n, edges, weights):
    """All-pairs shortest paths over an undirected weighted graph (Dijkstra)."""
    # csgraph treats explicit zeros as missing edges; duplicates get a tiny weight
    w = np.maximum(weights, 1e-300)
    W = csr_matrix((w, (edges[:, 0], edges[:, 1])), shape=(n, n))
    n_comp, labels = connected_components(W, directed=False)
    if n_comp > 1:
        sizes = sorted(np.bincount(labels).tolist(), reverse=True)
        raise DisconnectedGraphError(
            f"neighbour graph has {n_comp} connected components (sizes {sizes}); "
            "increase n_neighbors",
            component_sizes=sizes,
        )
    D = shortest_path(W, method="D", directed=False)
    D[np.abs(D) < 1e-300] = 0.0
    return 0.5 * (D + D.T)


def classical_mds(D, k):
    """Classical MDS of a distance matrix: eigenvalues, eigenvectors, coordinates."""
    N = D.shape[0]
    D2 = D * D
    J = np.eye(N) - 1.0 / N
    Bm = -0.5 * J @ D2 @ J
    w, V = _top_eigh(Bm, k)
    tol = _RANK_RTOL * max(abs(w[0]), 1e-300)
    n_pos = int(np.sum(w > tol))
    if n_pos < k:
        raise InvalidArgumentError(
            f"only {n_pos} positive MDS eigenvalues; cannot embed in k={k} dimensions"
        )
    lam = w[:k].copy()
    vec = _fix_signs(V[:, :k])
    return lam, vec, vec * np.sqrt(lam)


def fit_isomap(covariates, k, n_neighbors=DEFAULT_NEIGHBORS):
    """Isomap: kNN graph, Dijkstra geodesics, classical MDS."""
    X = _as_matrix(covariates)
    N, D = X.shape
    if n_neighbors < 1:
        raise InvalidArgumentError("n_neighbors must be >= 1")
    if N < 2 or not 1 <= k <= N - 1:
        raise InvalidArgumentError(f"k must lie in [1, {N - 1}], got {k}")
    edges, weights = knn_graph(X, n_neighbors)
    G = graph_distances(N, edges, weights)
    lam, vec, Z = classical_mds(G, k)
    state = {
        "train_points": _frozen(X.copy()),
        "n_neighbors": int(n_neighbors),
        "edges": _frozen(edges),
        "edge_weights": _frozen(weights),
        "geodesic": _frozen(G),
        "eigenvalues": _frozen(lam),
        "eigenvectors": _frozen(vec),
    }
    return LatentSpace("isomap", int(k), D, _frozen(Z), state)


def fit_space(method, covariates, k=None, n_neighbors=DEFAULT_NEIGHBORS):
    if method == "identity":
        return fit_identity(covariates)
    if method == "pca":
        return fit_pca(covariates, k)
    if method == "isomap":
        return fit_isomap(covariates, k, n_neighbors)
    raise InvalidArgumentError(f"unknown latent space method {method!r}")


def _isomap_extend(space, P):
    """Landmark out-of-sample map.

    A new point's geodesic distance to training point ``i`` is the best
    route through one of its ``n_neighbors`` nearest training points; the
    coordinates follow ``y = -1/2 L (delta^2 - mean column of D^2)`` with
    ``L`` the eigenvectors scaled by ``1/sqrt(lambda)``.  A training point
    maps exactly onto its fitted coordinates.
    """
    st = space.state
    X = st["train_points"]
    G = st["geodesic"]
    kk = min(st["n_neighbors"], X.shape[0])
    d = np.sqrt(np.maximum(
        (P * P).sum(1)[:, None] + (X * X).sum(1)[None, :] - 2.0 * P @ X.T, 0.0
    ))
    nbr = np.argsort(d, axis=1, kind="stable")[:, :kk]
    out = np.empty((P.shape[0], space.latent_dim))
    mu = (G * G).mean(axis=0)
    L = st["eigenvectors"] / np.sqrt(st["eigenvalues"])
    for r in range(P.shape[0]):
        dn = d[r, nbr[r]]
        delta = (dn[:, None] + G[nbr[r]]).min(axis=0)
        if dn[0] == 0.0:
            # coincides with a training point; use its geodesic row exactly
            delta = G[nbr[r, 0]]
        out[r] = -0.5 * (delta * delta - mu) @ L
    return out


def project(space, points):
    """Map ``points`` (M x D) into the latent space (M x K)."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2 or P.shape[1] != space.input_dim:
        raise InvalidArgumentError(
            f"points must have {space.input_dim} columns, got shape {np.shape(points)}"
        )
    if not np.all(np.isfinite(P)):
        raise InvalidArgumentError("points must be finite")
    if space.method == "identity":
        return P.copy()
    if space.method == "pca":
        return (P - space.state["mean"]) @ space.state["components"].T
    return _isomap_extend(space, P)
