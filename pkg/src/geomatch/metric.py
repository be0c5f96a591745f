"""Riemannian metric fields over the latent space.

Three kinds are supported: the identity (Euclidean) metric, a constant
Mahalanobis metric ``Sigma^{-1}``, and the Local Inverse Variance (LIV)
metric whose diagonal entries are

    G_jj(z) = 1 / (sum_i w_i(z) (z_ij - z_j)^2 + rho),
    w_i(z)  = exp(-||z_i - z||^2 / (2 sigma^2)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, rng
from .errors import InvalidArgumentError

DEFAULT_RHO = 1e-2
KINDS = ("euclidean", "mahalanobis", "liv")


@dataclass(frozen=True, eq=False)
class MetricModel:
    kind: str
    dim: int
    basis_points: np.ndarray | None = None
    sigma: float | None = None
    rho: float | None = None
    covariance: np.ndarray | None = None
    precision: np.ndarray | None = None

    @property
    def is_constant(self):
        return self.kind != "liv"

    @property
    def is_diagonal(self):
        return self.kind in ("euclidean", "liv")

    def constant_matrix(self):
        if self.kind == "euclidean":
            return np.eye(self.dim)
        if self.kind == "mahalanobis":
            return self.precision.copy()
        raise InvalidArgumentError("LIV metric is not constant")

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "liv":
            out.update(sigma=self.sigma, rho=self.rho, n_basis=int(self.basis_points.shape[0]))
        elif self.kind == "mahalanobis":
            out["covariance"] = self.covariance.tolist()
        return out


def euclidean_metric(dim):
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")
    return MetricModel(kind="euclidean", dim=int(dim))


def mahalanobis_metric(points=None, covariance=None):
    """Constant metric ``Sigma^{-1}``.

    With ``points`` the covariance is the sample covariance plus
    ``1e-8 * trace / K`` on the diagonal.
    """
    if (points is None) == (covariance is None):
        raise InvalidArgumentError("pass exactly one of points or covariance")
    if covariance is None:
        Z = np.asarray(points, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[0] < 2:
            raise InvalidArgumentError("need at least two points to estimate a covariance")
        cov = np.atleast_2d(np.cov(Z, rowvar=False))
        K = cov.shape[0]
        cov = cov + 1e-8 * np.trace(cov) / K * np.eye(K)
    else:
        cov = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
        if cov.shape[0] != cov.shape[1]:
            raise InvalidArgumentError("covariance must be square")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise InvalidArgumentError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
    eig = np.linalg.eigvalsh(cov)
    if eig.min() <= 1e-12:
        raise InvalidArgumentError(
            f"covariance is not positive definite (smallest eigenvalue {eig.min():.3g})"
        )
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    cov.setflags(write=False)
    precision.setflags(write=False)
    return MetricModel(kind="mahalanobis", dim=cov.shape[0], covariance=cov, precision=precision)


def liv_metric(basis_points, sigma, rho=DEFAULT_RHO, max_basis=None, seed=0):
    """LIV metric on ``basis_points``; ``max_basis`` keeps a seeded random subset."""
    B = np.array(basis_points, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] == 0:
        raise InvalidArgumentError("basis_points must be a non-empty N x K matrix")
    if not np.all(np.isfinite(B)):
        raise InvalidArgumentError("basis_points must be finite")
    if not (np.isfinite(sigma) and sigma > 0):
        raise InvalidArgumentError(f"sigma must be > 0, got {sigma}")
    if not (np.isfinite(rho) and rho > 0):
        raise InvalidArgumentError(f"rho must be > 0, got {rho}")
    if max_basis is not None and max_basis < B.shape[0]:
        order = np.argsort(rng.uniforms(seed, rng.STREAM_SUBSAMPLE, B.shape[0]), kind="stable")
        B = B[np.sort(order[:max_basis])]
    B = np.ascontiguousarray(B)
    B.setflags(write=False)
    return MetricModel(kind="liv", dim=B.shape[1], basis_points=B, sigma=float(sigma), rho=float(rho))


def _as_points(model, points):
    Z = np.ascontiguousarray(points, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.shape[-1] != model.dim:
        raise InvalidArgumentError(f"expected points of dimension {model.dim}, got {Z.shape[-1]}")
    if not np.all(np.isfinite(Z)):
        raise InvalidArgumentError("metric evaluated at a non-finite point")
    return Z


def metric_diag(model, points):
    """Diagonal of ``G`` at many points, shape (P, K); diagonal kinds only."""
    Z = _as_points(model, points)
    if model.kind == "euclidean":
        return np.ones_like(Z)
    if model.kind == "liv":
        return _kernels.liv_diag(Z, model.basis_points, model.sigma, model.rho)
    raise InvalidArgumentError("Mahalanobis metric is not diagonal")


def metric_diag_grad(model, points):
    """Diagonal and its derivatives ``dg[p, l, j] = d G_jj / d z_l``."""
    Z = _as_points(model, points)
    if model.kind == "euclidean":
        K = model.dim
        return np.ones_like(Z), np.zeros((Z.shape[0], K, K))
    if model.kind == "liv":
        return _kernels.liv_diag_grad(Z, model.basis_points, model.sigma, model.rho)
    raise InvalidArgumentError("Mahalanobis metric is not diagonal")


def metric_at(model, z):
    """The K x K metric tensor at a single point."""
    Z = _as_points(model, z)
    if Z.shape[0] != 1:
        raise InvalidArgumentError("metric_at takes a single point")
    if model.is_constant:
        return model.constant_matrix()
    return np.diag(metric_diag(model, Z)[0])


def metric_gradient_at(model, z):
    """Tensor ``T[a, b, k] = d G_ab / d z_k`` at a single point."""
    Z = _as_points(model, z)
    if Z.shape[0] != 1:
        raise InvalidArgumentError("metric_gradient_at takes a single point")
    K = model.dim
    out = np.zeros((K, K, K))
    if model.is_constant:
        return out
    _, dg = metric_diag_grad(model, Z)
    idx = np.arange(K)
    # dg[0, l, j] -> out[j, j, l]
    out[idx, idx, :] = dg[0].T
    return out


def magnification_factor(model, z):
    """``sqrt(det G(z))`` for one point (1-D input) or many (2-D input)."""
    Z = np.asarray(z, dtype=np.float64)
    single = Z.ndim == 1
    Z = _as_points(model, Z)
    if model.is_constant:
        value = float(np.sqrt(np.linalg.det(model.constant_matrix())))
        out = np.full(Z.shape[0], value)
    else:
        # product of diagonal entries in log space keeps large K finite
        out = np.exp(0.5 * np.sum(np.log(metric_diag(model, Z)), axis=1))
    return float(out[0]) if single else out
