import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geomatch.errors import InvalidArgumentError
from geomatch.metric import (
    euclidean_metric,
    liv_metric,
    magnification_factor,
    mahalanobis_metric,
    metric_at,
    metric_diag,
    metric_gradient_at,
)


def liv_oracle(basis, z, sigma, rho):
    """Diagonal of the LIV metric in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    K = len(z)
    out = []
    for j in range(K):
        s = mpmath.mpf(0)
        for p in basis:
            d2 = sum((mpmath.mpf(float(p[k])) - mpmath.mpf(float(z[k]))) ** 2 for k in range(K))
            w = mpmath.exp(-d2 / (2 * mpmath.mpf(float(sigma)) ** 2))
            s += w * (mpmath.mpf(float(p[j])) - mpmath.mpf(float(z[j]))) ** 2
        out.append(1 / (s + mpmath.mpf(float(rho))))
    return np.array([float(v) for v in out])


def test_euclidean_identity():
    m = euclidean_metric(3)
    assert np.array_equal(metric_at(m, np.zeros(3)), np.eye(3))
    assert magnification_factor(m, np.array([1.0, 2.0, 3.0])) == 1.0
    assert np.all(metric_gradient_at(m, np.ones(3)) == 0)


def test_mahalanobis_inverse_covariance():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    m = mahalanobis_metric(covariance=cov)
    assert np.allclose(metric_at(m, np.zeros(2)) @ cov, np.eye(2), atol=1e-12)
    assert magnification_factor(m, np.zeros(2)) == pytest.approx(1 / np.sqrt(np.linalg.det(cov)))
    with pytest.raises(InvalidArgumentError):
        mahalanobis_metric(covariance=np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(InvalidArgumentError):
        mahalanobis_metric(covariance=np.array([[1.0, 0.3], [0.0, 1.0]]))


def test_mahalanobis_from_points_regularised():
    Z = np.random.default_rng(0).normal(size=(50, 3))
    m = mahalanobis_metric(points=Z)
    cov = np.cov(Z, rowvar=False)
    assert np.allclose(m.covariance, cov + 1e-8 * np.trace(cov) / 3 * np.eye(3), rtol=0, atol=1e-15)


def test_liv_single_basis_point_at_z():
    m = liv_metric([[0.3]], sigma=0.7, rho=0.1)
    assert metric_at(m, np.array([0.3]))[0, 0] == pytest.approx(10.0, rel=1e-15)


def test_liv_symmetric_pair_value():
    m = liv_metric([[-1.0], [1.0]], sigma=1.0, rho=0.01)
    g = metric_at(m, np.array([0.0]))[0, 0]
    assert g == pytest.approx(1 / (2 * np.exp(-0.5) + 0.01), rel=1e-14)
    # the quoted decimals 0.81756 / 0.90419 are off in the fifth place
    assert g == pytest.approx(0.81756, abs=1e-4)
    assert magnification_factor(m, np.array([0.0])) == pytest.approx(np.sqrt(g), rel=1e-14)
    assert magnification_factor(m, np.array([0.0])) == pytest.approx(0.90419, abs=1e-4)
    # odd function at the symmetry point
    assert abs(metric_gradient_at(m, np.array([0.0]))[0, 0, 0]) < 1e-15


def test_liv_far_field():
    B = np.random.default_rng(1).normal(size=(30, 2))
    m = liv_metric(B, sigma=0.5, rho=0.01)
    z = np.array([60.0, -40.0])
    assert np.allclose(np.diag(metric_at(m, z)), 100.0, rtol=0, atol=1e-9)
    assert magnification_factor(m, z) == pytest.approx(0.01 ** -1.0, rel=1e-6)


def test_liv_matches_high_precision_oracle():
    r = np.random.default_rng(2)
    for _ in range(20):
        K = int(r.integers(1, 4))
        B = r.normal(size=(int(r.integers(1, 15)), K))
        z = r.normal(size=K)
        sigma = float(r.uniform(0.1, 2.0))
        rho = float(r.uniform(1e-3, 0.5))
        m = liv_metric(B, sigma, rho)
        assert np.allclose(metric_diag(m, z)[0], liv_oracle(B, z, sigma, rho), rtol=1e-12, atol=0)


def test_liv_gradient_matches_finite_differences():
    r = np.random.default_rng(3)
    h = 1e-5
    for _ in range(100):
        K = int(r.integers(1, 4))
        B = r.normal(size=(int(r.integers(2, 20)), K))
        m = liv_metric(B, float(r.uniform(0.3, 2.0)), float(r.uniform(0.01, 0.5)))
        z = r.normal(size=K)
        T = metric_gradient_at(m, z)
        fd = np.zeros_like(T)
        for k in range(K):
            e = np.zeros(K)
            e[k] = h
            fd[:, :, k] = (metric_at(m, z + e) - metric_at(m, z - e)) / (2 * h)
        scale = np.abs(fd).max() + 1e-12
        assert np.abs(T - fd).max() <= 1e-5 * scale


def test_liv_gradient_off_diagonal_zero():
    m = liv_metric(np.random.default_rng(4).normal(size=(10, 3)), 1.0)
    T = metric_gradient_at(m, np.zeros(3))
    off = ~np.eye(3, dtype=bool)
    assert np.all(T[off] == 0)


def test_liv_bounds_and_continuity():
    r = np.random.default_rng(5)
    B = r.normal(size=(40, 2))
    m = liv_metric(B, 0.4, 0.02)
    Z = r.normal(scale=3, size=(500, 2))
    g = metric_diag(m, Z)
    assert np.all(g > 0) and np.all(g <= 1 / 0.02)
    z = r.normal(size=2)
    gaps = [np.abs(metric_at(m, z + eps) - metric_at(m, z)).max() for eps in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-3


def test_magnification_lower_inside_dense_data():
    g = np.linspace(-1, 1, 15)
    B = np.array([(x, y) for x in g for y in g])
    m = liv_metric(B, 0.3, 0.01)
    far = 0.01 ** -1.0
    inside = magnification_factor(m, np.random.default_rng(6).uniform(-0.8, 0.8, size=(100, 2)))
    assert np.all(inside < far)


def test_large_k_magnification_finite():
    B = np.random.default_rng(7).normal(size=(20, 100))
    m = liv_metric(B, 1.0, 1e-3)
    v = magnification_factor(m, np.full(100, 50.0))
    assert v == pytest.approx((1e-3) ** -50, rel=1e-6)


def test_liv_argument_errors():
    with pytest.raises(InvalidArgumentError):
        liv_metric(np.zeros((3, 2)), sigma=0.0)
    with pytest.raises(InvalidArgumentError):
        liv_metric(np.zeros((3, 2)), sigma=1.0, rho=-1.0)
    with pytest.raises(InvalidArgumentError):
        liv_metric(np.zeros((0, 2)), sigma=1.0)
    m = liv_metric(np.zeros((3, 2)), 1.0)
    with pytest.raises(InvalidArgumentError):
        metric_at(m, np.array([np.nan, 0.0]))
    with pytest.raises(InvalidArgumentError):
        metric_at(m, np.zeros(3))


def test_liv_subsampling_is_seeded():
    B = np.arange(40.0).reshape(20, 2)
    a = liv_metric(B, 1.0, max_basis=5, seed=3)
    b = liv_metric(B, 1.0, max_basis=5, seed=3)
    assert a.basis_points.shape == (5, 2)
    assert np.array_equal(a.basis_points, b.basis_points)


@settings(max_examples=80, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n=st.integers(1, 12),
    k=st.integers(1, 3),
    sigma=st.floats(0.05, 5.0),
    rho=st.floats(1e-4, 1.0),
)
def test_liv_diagonal_property(seed, n, k, sigma, rho):
    r = np.random.default_rng(seed)
    m = liv_metric(r.normal(size=(n, k)), sigma, rho)
    z = r.normal(scale=2, size=k)
    G = metric_at(m, z)
    assert np.array_equal(G, np.diag(np.diag(G)))
    assert np.all(np.diag(G) > 0) and np.all(np.diag(G) <= 1 / rho * (1 + 1e-15))
    assert magnification_factor(m, z) == pytest.approx(np.sqrt(np.prod(np.diag(G))), rel=1e-12)
