import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import shortest_path
from scipy.spatial.distance import cdist

from geomatch.data import generate_swissroll
from geomatch.errors import DisconnectedGraphError, InvalidArgumentError
from geomatch.manifold import (
    LatentSpace,
    classical_mds,
    fit_identity,
    fit_isomap,
    fit_pca,
    fit_space,
    knn_graph,
    load_json,
    project,
    save_json,
)


def test_pca_exact_subspace():
    r = np.random.default_rng(0)
    X = np.zeros((50, 5))
    X[:, :2] = r.normal(size=(50, 2))
    sp = fit_pca(X, 2)
    recon = sp.train_latent @ sp.state["components"] + sp.state["mean"]
    assert np.abs(recon - X).max() < 1e-9


def test_pca_variances_match_covariance_eigenvalues():
    X = np.random.default_rng(1).normal(size=(80, 4)) @ np.diag([3.0, 2.0, 1.0, 0.5])
    sp = fit_pca(X, 3)
    top = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1][:3]
    assert np.allclose(sp.train_latent.var(axis=0, ddof=1), top, rtol=1e-10)
    assert np.allclose(sp.state["explained_variance"], top, rtol=1e-10)
    assert np.all(np.diff(sp.state["explained_variance"]) <= 0)
    assert sp.state["explained_variance"].sum() <= np.cov(X, rowvar=False).trace() + 1e-12
    C = sp.state["components"]
    assert np.abs(C @ C.T - np.eye(3)).max() < 1e-8
    assert np.abs(sp.train_latent.mean(axis=0)).max() < 1e-9


def test_pca_sign_convention_and_determinism():
    X = np.random.default_rng(2).normal(size=(30, 3))
    a, b = fit_pca(X, 2), fit_pca(X, 2)
    assert np.array_equal(a.train_latent, b.train_latent)
    C = a.state["components"]
    assert np.all(C[np.arange(2), np.argmax(np.abs(C), axis=1)] > 0)


def test_pca_projection():
    X = np.random.default_rng(3).normal(size=(40, 3))
    sp = fit_pca(X, 2)
    assert np.allclose(project(sp, X), sp.train_latent, atol=1e-8)
    assert np.allclose(project(sp, sp.state["mean"]), 0.0, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        project(sp, np.zeros((2, 4)))


def test_pca_errors():
    X = np.random.default_rng(4).normal(size=(10, 3))
    with pytest.raises(InvalidArgumentError):
        fit_pca(X, 0)
    with pytest.raises(InvalidArgumentError):
        fit_pca(X, 4)
    flat = np.column_stack([X[:, 0], np.zeros(10), np.zeros(10)])
    with pytest.raises(InvalidArgumentError, match="rank 1"):
        fit_pca(flat, 2)


def test_identity_space():
    X = np.random.default_rng(5).normal(size=(5, 3))
    sp = fit_identity(X)
    assert sp.latent_dim == 3
    assert np.array_equal(project(sp, X), X)


def test_isomap_on_a_line_is_euclidean():
    t = np.linspace(0, 5, 30) + np.random.default_rng(6).uniform(0, 0.05, 30)
    X = np.column_stack([t, 2 * t, -t])
    sp = fit_isomap(X, 1, n_neighbors=3)
    assert np.allclose(sp.state["geodesic"], cdist(X, X), rtol=0, atol=1e-12)


def test_isomap_full_graph_is_classical_mds():
    # convex position: points on a circle arc, full neighbour graph
    a = np.linspace(0, np.pi, 20)
    X = np.column_stack([np.cos(a), np.sin(a)])
    sp = fit_isomap(X, 2, n_neighbors=19)
    D = cdist(X, X)
    lam, vec, Z = classical_mds(D, 2)
    assert np.allclose(sp.train_latent, Z, atol=1e-10)
    # independent MDS oracle, up to sign
    N = len(X)
    J = np.eye(N) - 1 / N
    w, V = np.linalg.eigh(-0.5 * J @ (D * D) @ J)
    ref = V[:, ::-1][:, :2] * np.sqrt(w[::-1][:2])
    assert np.allclose(np.abs(Z), np.abs(ref), atol=1e-10)


def test_isomap_distance_properties():
    X = generate_swissroll(80, 3, seed=1).covariates
    sp = fit_isomap(X, 2)
    G = sp.state["geodesic"]
    assert np.array_equal(G, G.T)
    assert np.all(np.diag(G) == 0)
    # triangle inequality via a second shortest-path pass
    assert np.allclose(shortest_path(G, method="FW"), G, rtol=1e-12, atol=1e-12)


def test_isomap_self_projection():
    X = generate_swissroll(60, 3, seed=2).covariates
    sp = fit_isomap(X, 2)
    assert np.abs(project(sp, X) - sp.train_latent).max() < 1e-6


def test_isomap_open_arc_unwraps():
    a = np.linspace(0, 1.5 * np.pi, 100)
    X = np.column_stack([np.cos(a), np.sin(a)])
    z = fit_isomap(X, 1, n_neighbors=4).train_latent[:, 0]
    assert abs(np.corrcoef(z, a)[0, 1]) > 0.9999


def test_isomap_disconnected():
    X = np.vstack([np.zeros((5, 2)) + np.arange(5)[:, None] * 0.1, np.full((5, 2), 50.0) + np.arange(5)[:, None] * 0.1])
    with pytest.raises(DisconnectedGraphError) as info:
        fit_isomap(X, 1, n_neighbors=2)
    assert list(info.value.component_sizes) == [5, 5]
    assert "5, 5" in str(info.value)


def test_knn_graph_symmetrised():
    X = np.array([[0.0], [1.0], [3.0], [7.0]])
    edges, weights = knn_graph(X, 1)
    assert edges.tolist() == [[0, 1], [1, 2], [2, 3]]
    assert weights.tolist() == [1.0, 2.0, 4.0]


def test_json_round_trip(tmp_path):
    X = generate_swissroll(40, 3, seed=3).covariates
    for sp in (fit_identity(X), fit_pca(X, 2), fit_isomap(X, 2)):
        path = tmp_path / f"{sp.method}.json"
        save_json(sp, path)
        back = load_json(path)
        assert isinstance(back, LatentSpace)
        assert np.array_equal(back.train_latent, sp.train_latent)
        assert np.array_equal(project(back, X[:5]), project(sp, X[:5]))


def test_fit_space_dispatch():
    X = np.random.default_rng(7).normal(size=(10, 3))
    assert fit_space("pca", X, 2).method == "pca"
    with pytest.raises(InvalidArgumentError):
        fit_space("tsne", X, 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(5, 40), d=st.integers(2, 6))
def test_pca_fit_is_bit_identical(seed, n, d):
    X = np.random.default_rng(seed).normal(size=(n, d))
    k = min(2, n - 1, d)
    a, b = fit_pca(X, k), fit_pca(X.copy(), k)
    assert np.array_equal(a.train_latent, b.train_latent)
    assert a.state["explained_variance"].sum() <= np.cov(X, rowvar=False).trace() * (1 + 1e-12)
