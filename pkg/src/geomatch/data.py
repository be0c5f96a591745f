"""Datasets, synthetic generators, CSV persistence and train/test splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import rng
from .errors import ConsistencyError, DegenerateSplitError, InvalidArgumentError, SchemaError

DEFAULT_SIGMA_X = 0.05
DEFAULT_SIGMA_Y = 0.1

_OPTIONAL_VECTORS = ("potential_y0", "potential_y1", "true_ite", "intrinsic_coord", "mu0", "mu1")
_CSV_OPTIONAL = {
    "y0": "potential_y0",
    "y1": "potential_y1",
    "ite": "true_ite",
    "r": "intrinsic_coord",
    "mu0": "mu0",
    "mu1": "mu1",
}


def _frozen(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates ``X``, binary treatment ``T`` and outcome ``Y`` for ``N`` units.

    Synthetic generators also fill the potential outcomes, the true ITE, the
    generator's intrinsic coordinate and the noiseless response surfaces
    ``mu0``/``mu1``.  Arrays are read-only after construction.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    potential_y0: np.ndarray | None = None
    potential_y1: np.ndarray | None = None
    true_ite: np.ndarray | None = None
    intrinsic_coord: np.ndarray | None = None
    mu0: np.ndarray | None = None
    mu1: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InvalidArgumentError("covariates must be an N x D matrix")
        n, d = X.shape
        if n < 2 or d < 1:
            raise InvalidArgumentError(f"need N >= 2 and D >= 1, got N={n}, D={d}")
        object.__setattr__(self, "covariates", _frozen(X))

        t = np.asarray(self.treatment)
        if t.shape != (n,):
            raise InvalidArgumentError(f"treatment must have length {n}")
        if not np.all((t == 0) | (t == 1)):
            raise InvalidArgumentError("treatment values must be 0 or 1")
        object.__setattr__(self, "treatment", _frozen(t, np.int8))

        for name in ("outcome",) + _OPTIONAL_VECTORS:
            value = getattr(self, name)
            if value is None:
                continue
            v = np.asarray(value, dtype=np.float64)
            if v.shape != (n,):
                raise InvalidArgumentError(f"{name} must have length {n}, got shape {v.shape}")
            object.__setattr__(self, name, _frozen(v))

        if self.potential_y0 is not None and self.potential_y1 is not None:
            expected = np.where(self.treatment == 1, self.potential_y1, self.potential_y0)
            bad = np.flatnonzero(expected != self.outcome)
            if bad.size:
                raise ConsistencyError(
                    f"outcome differs from potential outcome y{self.treatment[bad[0]]} "
                    f"at unit {bad[0]}"
                )
            if self.true_ite is not None:
                diff = self.potential_y1 - self.potential_y0
                if not np.allclose(self.true_ite, diff, rtol=1e-12, atol=1e-12):
                    bad = np.flatnonzero(~np.isclose(self.true_ite, diff, rtol=1e-12, atol=1e-12))
                    raise ConsistencyError(f"true_ite differs from y1 - y0 at unit {bad[0]}")

    @property
    def n(self):
        return self.covariates.shape[0]

    @property
    def dim(self):
        return self.covariates.shape[1]

    @property
    def treated(self):
        return np.flatnonzero(self.treatment == 1)

    @property
    def control(self):
        return np.flatnonzero(self.treatment == 0)

    @property
    def true_ate(self):
        return None if self.true_ite is None else float(np.mean(self.true_ite))

    def subset(self, index):
        index = np.asarray(index, dtype=np.intp)
        kwargs = {}
        for f in fields(self):
            value = getattr(self, f.name)
            kwargs[f.name] = None if value is None else value[index]
        return Dataset(**kwargs)

    def with_covariates(self, covariates):
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        kwargs["covariates"] = covariates
        return Dataset(**kwargs)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or not np.array_equal(a, b)):
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgumentError("train_fraction must lie in (0, 1)")
        object.__setattr__(self, "seed", rng.check_seed(self.seed))


def _check_common(n, ambient_dim, min_dim, sigma_x, sigma_y):
    if n < 2:
        raise InvalidArgumentError(f"n must be >= 2, got {n}")
    if ambient_dim < min_dim:
        raise InvalidArgumentError(f"ambient_dim must be >= {min_dim}, got {ambient_dim}")
    if sigma_x < 0 or sigma_y < 0:
        raise InvalidArgumentError("noise scales must be non-negative")


def swissroll_mu0(x):
    return -0.5 * x + 1.5 * np.pi


def swissroll_mu1(x):
    return -1.5 * x + 4.5 * np.pi


def generate_swissroll(n, ambient_dim=3, sigma_x=DEFAULT_SIGMA_X, sigma_y=DEFAULT_SIGMA_Y, seed=0):
    """Swissroll covariates with a propensity that varies along the roll.

    Per unit the stream yields, in order: R, X3, the D-3 noise columns,
    the treatment uniform, then the Y(0) and Y(1) noise draws.
    ``P(T=1 | R) = sigmoid(R - 3*pi)``.
    """
    _check_common(n, ambient_dim, 3, sigma_x, sigma_y)
    u = rng.uniform_block(seed, rng.STREAM_DATA, n, ambient_dim + 2)
    r = 1.5 * np.pi + 3.0 * np.pi * u[:, 0]
    X = np.empty((n, ambient_dim))
    X[:, 0] = r * np.cos(r)
    X[:, 1] = r * np.sin(r)
    X[:, 2] = 8.0 * u[:, 1]
    if ambient_dim > 3:
        X[:, 3:] = sigma_x * rng.std_normal(u[:, 2 : ambient_dim - 1])
    t = (u[:, ambient_dim - 1] < expit(r - 3.0 * np.pi)).astype(np.int8)
    shifted = r - 1.5 * np.pi
    mu0 = swissroll_mu0(shifted)
    mu1 = swissroll_mu1(shifted)
    y0 = mu0 + sigma_y * rng.std_normal(u[:, ambient_dim])
    y1 = mu1 + sigma_y * rng.std_normal(u[:, ambient_dim + 1])
    return _assemble(X, t, y0, y1, r, mu0, mu1)


def _assemble(X, t, y0, y1, coord, mu0, mu1):
    y = np.where(t == 1, y1, y0)
    return Dataset(
        covariates=X,
        treatment=t,
        outcome=y,
        potential_y0=y0,
        potential_y1=y1,
        true_ite=y1 - y0,
        intrinsic_coord=coord,
        mu0=mu0,
        mu1=mu1,
    )


def ustrip_embedding(z1, z2):
    radius = 1.0 + 0.3 * z2
    return np.column_stack([radius * np.cos(z1 / 2.0), radius * np.sin(z1 / 2.0)])


def generate_ustrip(
    n,
    ambient_dim=2,
    sigma_x=DEFAULT_SIGMA_X,
    sigma_y=DEFAULT_SIGMA_Y,
    sigmoid_k=1.0,
    sigmoid_z0=np.pi,
    seed=0,
):
    """U-shaped strip: a half annulus parameterised by arc ``Z1`` and width ``Z2``.

    Per-unit draw order: Z1, Z2, the D Gaussian covariate noises, the
    treatment uniform, Y(0) noise, Y(1) noise.
    """
    _check_common(n, ambient_dim, 2, sigma_x, sigma_y)
    u = rng.uniform_block(seed, rng.STREAM_DATA, n, ambient_dim + 5)
    z1 = 2.0 * np.pi * u[:, 0]
    z2 = u[:, 1]
    X = np.zeros((n, ambient_dim))
    X[:, :2] = ustrip_embedding(z1, z2)
    X += sigma_x * rng.std_normal(u[:, 2 : 2 + ambient_dim])
    t = (u[:, ambient_dim + 2] < expit(sigmoid_k * (z1 - sigmoid_z0))).astype(np.int8)
    mu0 = z1.copy()
    mu1 = 2.0 * z1
    y0 = mu0 + sigma_y * rng.std_normal(u[:, ambient_dim + 3])
    y1 = mu1 + sigma_y * rng.std_normal(u[:, ambient_dim + 4])
    return _assemble(X, t, y0, y1, z1, mu0, mu1)


def semisynthetic_response(x):
    return 0.4 * np.sin(x + 0.5) + 0.5


def assign_semisynthetic(covariates, latent_coord, sigma_y=DEFAULT_SIGMA_Y, seed=0):
    """Attach treatment and outcomes to user covariates.

    ``T ~ Bernoulli(sigmoid(z))`` and both potential outcomes share the
    response ``0.4 sin(z + 1/2) + 1/2``, so the true ITE is zero up to noise.
    Draw order per unit: treatment uniform, Y(0) noise, Y(1) noise.
    """
    X = np.asarray(covariates, dtype=np.float64)
    z = np.asarray(latent_coord, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if z.ndim != 1 or z.shape[0] != X.shape[0]:
        raise InvalidArgumentError(
            f"latent_coord must be a vector of length {X.shape[0]}, got shape {z.shape}"
        )
    if sigma_y < 0:
        raise InvalidArgumentError("sigma_y must be non-negative")
    n = X.shape[0]
    u = rng.uniform_block(seed, rng.STREAM_DATA, n, 3)
    t = (u[:, 0] < expit(z)).astype(np.int8)
    mu = semisynthetic_response(z)
    y0 = mu + sigma_y * rng.std_normal(u[:, 1])
    y1 = mu + sigma_y * rng.std_normal(u[:, 2])
    return _assemble(X, t, y0, y1, z, mu, mu.copy())


def save_csv(dataset, path):
    """Write ``dataset`` with 17 significant digits so a reload is exact."""
    path = Path(path)
    columns = [f"x{j}" for j in range(dataset.dim)] + ["t", "y"]
    extra = [(col, getattr(dataset, attr)) for col, attr in _CSV_OPTIONAL.items()]
    extra = [(col, v) for col, v in extra if v is not None]
    columns += [col for col, _ in extra]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for i in range(dataset.n):
            row = [format(v, ".17g") for v in dataset.covariates[i]]
            row.append(str(int(dataset.treatment[i])))
            row.append(format(dataset.outcome[i], ".17g"))
            row += [format(v[i], ".17g") for _, v in extra]
            writer.writerow(row)
    return path


def _parse_float(text, column, line):
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"line {line}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise SchemaError(f"line {line}: column {column!r} is not finite: {text!r}")
    return value


def load_csv(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    known = {"t", "y"} | set(_CSV_OPTIONAL)
    xcols = sorted(
        (h for h in header if h.startswith("x") and h[1:].isdigit()), key=lambda h: int(h[1:])
    )
    if not xcols:
        raise SchemaError(f"{path}: missing required covariate columns x0..x{{D-1}}")
    for j, name in enumerate(xcols):
        if name != f"x{j}":
            raise SchemaError(f"{path}: missing required column x{j}")
    for required in ("t", "y"):
        if required not in header:
            raise SchemaError(f"{path}: missing required column {required!r}")
    unknown = [h for h in header if h not in known and h not in xcols]
    if unknown:
        raise SchemaError(f"{path}: unknown column {unknown[0]!r}")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names")

    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    X = np.empty((n, len(xcols)))
    t = np.empty(n, dtype=np.int8)
    y = np.empty(n)
    optional = {attr: np.empty(n) for col, attr in _CSV_OPTIONAL.items() if col in pos}
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise SchemaError(f"line {line}: expected {len(header)} fields, found {len(row)}")
        for j, name in enumerate(xcols):
            X[i, j] = _parse_float(row[pos[name]], name, line)
        tv = row[pos["t"]].strip()
        if tv not in ("0", "1"):
            raise SchemaError(f"line {line}: column 't' must be 0 or 1, found {tv!r}")
        t[i] = int(tv)
        y[i] = _parse_float(row[pos["y"]], "y", line)
        for col, attr in _CSV_OPTIONAL.items():
            if attr in optional:
                optional[attr][i] = _parse_float(row[pos[col]], col, line)
    if n < 2:
        raise SchemaError(f"{path}: need at least 2 data rows, found {n}")

    if "potential_y0" in optional and "potential_y1" in optional:
        expected = np.where(t == 1, optional["potential_y1"], optional["potential_y0"])
        bad = np.flatnonzero(expected != y)
        if bad.size:
            raise ConsistencyError(
                f"line {bad[0] + 2}: y does not equal y{t[bad[0]]} (consistency violated)"
            )
    return Dataset(covariates=X, treatment=t, outcome=y, **optional)


def split_indices(n, spec):
    """Sorted ``(train, test)`` index arrays for ``n`` units."""
    n_train = int(math.floor(spec.train_fraction * n + 0.5))
    if not 1 <= n_train <= n - 1:
        raise DegenerateSplitError(f"train size {n_train} leaves an empty split for N={n}")
    order = np.argsort(rng.uniforms(spec.seed, rng.STREAM_SPLIT, n), kind="stable")
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split(dataset, spec):
    """Deterministic permutation split into ``(train, test)``."""
    train_idx, test_idx = split_indices(dataset.n, spec)
    for name, idx in (("train", train_idx), ("test", test_idx)):
        t = dataset.treatment[idx]
        if not (t == 1).any() or not (t == 0).any():
            raise DegenerateSplitError(
                f"{name} split has {int(t.sum())} treated and {int((t == 0).sum())} control units; "
                "both groups must be non-empty"
            )
    return dataset.subset(train_idx), dataset.subset(test_idx)
