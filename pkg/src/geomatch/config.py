"""Experiment configuration: a TOML document with a fixed schema.

Sections and keys (defaults in brackets)::

    [dataset]
    kind = "swissroll"        # swissroll | ustrip | csv
    n = 200
    ambient_dim = 3           # ["swissroll": 3, "ustrip": 2]
    sigma_x = 0.05
    sigma_y = 0.1
    sigmoid_k = 1.0           # ustrip only
    sigmoid_z0 = 3.14159...   # ustrip only [pi]
    path = "data.csv"         # csv only
    ate_true = 1.0            # csv only, optional reference ATE

    [experiment]
    seeds = [0, 1, ...]       # [0..19 for generators, 0..4 for csv]
    spaces = [{method = "pca", k = [2]}, {method = "identity", distances = ["euclidean"]}]
    distances = ["euclidean", "riemannian"]   # a space's own list replaces this
    sigma_factors = [...]     # [10 log-spaced values in [0.05, 5]]
    sigma_scale = "median"    # median | absolute
    rho = 0.01
    max_basis = 0             # 0 keeps every training point
    train_fraction = 0.75
    selection = "ate"         # ate | pehe
    two_sided = true
    fail_fast = false
    jobs = 1
    plots = false
    output_dir = "out"

    [geodesic]                # fields of GeodesicOptions
    nodes = 32
    ...

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import InvalidArgumentError, SchemaError
from .geodesic import GeodesicOptions
from .manifold import DEFAULT_NEIGHBORS, METHODS

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DATASET_KINDS = ("swissroll", "ustrip", "csv")
DISTANCES = ("euclidean", "mahalanobis", "riemannian", "random")
DEFAULT_SIGMA_FACTORS = tuple(float(v) for v in np.geomspace(0.05, 5.0, 10))


def _check_distances(distances):
    if not distances:
        raise InvalidArgumentError("distances must be non-empty")
    for d in distances:
        if d not in DISTANCES:
            raise InvalidArgumentError(f"distance must be one of {DISTANCES}, got {d!r}")
    if len(set(distances)) != len(distances):
        raise InvalidArgumentError("duplicate distances")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "swissroll"
    n: int = 200
    ambient_dim: int | None = None
    sigma_x: float = 0.05
    sigma_y: float = 0.1
    sigmoid_k: float = 1.0
    sigmoid_z0: float = math.pi
    path: str | None = None
    ate_true: float | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise InvalidArgumentError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise InvalidArgumentError("dataset kind 'csv' needs a path")
        if self.ambient_dim is None and self.kind != "csv":
            object.__setattr__(self, "ambient_dim", 3 if self.kind == "swissroll" else 2)

    @property
    def synthetic(self):
        return self.kind != "csv"


@dataclass(frozen=True)
class SpaceSpec:
    method: str
    k: int | None = None
    n_neighbors: int = DEFAULT_NEIGHBORS
    distances: tuple | None = None

    def __post_init__(self):
        if self.distances is not None:
            object.__setattr__(self, "distances", tuple(self.distances))
            _check_distances(self.distances)
        if self.method not in METHODS:
            raise InvalidArgumentError(f"space method must be one of {METHODS}, got {self.method!r}")
        if self.method != "identity" and (self.k is None or self.k < 1):
            raise InvalidArgumentError(f"space {self.method!r} needs k >= 1")
        if self.method == "identity" and self.k is not None:
            raise InvalidArgumentError("the identity space takes no k")

    @property
    def key(self):
        return self.method if self.k is None else f"{self.method}{self.k}"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    seeds: tuple = ()
    spaces: tuple = (SpaceSpec("identity"), SpaceSpec("pca", 2))
    distances: tuple = ("euclidean", "riemannian")
    sigma_factors: tuple = DEFAULT_SIGMA_FACTORS
    sigma_scale: str = "median"
    rho: float = 1e-2
    max_basis: int = 0
    train_fraction: float = 0.75
    selection: str = "ate"
    two_sided: bool = True
    fail_fast: bool = False
    jobs: int = 1
    plots: bool = False
    output_dir: str = "out"
    geodesic: GeodesicOptions = field(default_factory=GeodesicOptions)

    def __post_init__(self):
        if not self.seeds:
            n = 20 if self.dataset.synthetic else 5
            object.__setattr__(self, "seeds", tuple(range(n)))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(set(self.seeds)) != len(self.seeds) or any(s < 0 for s in self.seeds):
            raise InvalidArgumentError("seeds must be distinct non-negative integers")
        if not self.spaces:
            raise InvalidArgumentError("spaces must be non-empty")
        keys = [s.key for s in self.spaces]
        if len(set(keys)) != len(keys):
            raise InvalidArgumentError(f"duplicate spaces in {keys}")
        object.__setattr__(self, "distances", tuple(self.distances))
        _check_distances(self.distances)
        object.__setattr__(self, "sigma_factors", tuple(float(s) for s in self.sigma_factors))
        if any("riemannian" in self.space_distances(s) for s in self.spaces) and not self.sigma_factors:
            raise InvalidArgumentError("riemannian distances need a non-empty sigma grid")
        if any(not (np.isfinite(s) and s > 0) for s in self.sigma_factors):
            raise InvalidArgumentError("sigma grid values must be finite and > 0")
        if self.sigma_scale not in ("median", "absolute"):
            raise InvalidArgumentError("sigma_scale must be 'median' or 'absolute'")
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise InvalidArgumentError("rho must be > 0")
        if self.max_basis < 0:
            raise InvalidArgumentError("max_basis must be >= 0")
        if not 0 < self.train_fraction < 1:
            raise InvalidArgumentError("train_fraction must lie in (0, 1)")
        if self.selection not in ("ate", "pehe"):
            raise InvalidArgumentError("selection must be 'ate' or 'pehe'")
        if self.jobs < 1:
            raise InvalidArgumentError("jobs must be >= 1")

    def space_distances(self, space):
        return space.distances if space.distances is not None else self.distances

    def distance_order(self):
        """Config distances first, then any listed only by a space."""
        extra = [d for d in DISTANCES if d not in self.distances and any(d in self.space_distances(s) for s in self.spaces)]
        return tuple(self.distances) + tuple(extra)

    def to_dict(self):
        """Plain-data form used in reports; excludes execution-only keys."""
        out = {
            "dataset": asdict(self.dataset),
            "geodesic": asdict(self.geodesic),
            "spaces": [asdict(s) for s in self.spaces],
        }
        for f in fields(self):
            if f.name in ("dataset", "geodesic", "spaces", "jobs", "output_dir", "plots"):
                continue
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


_SECTIONS = {"dataset", "experiment", "geodesic"}


def _check_keys(section, doc, allowed):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise SchemaError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _spaces(items):
    out = []
    if not isinstance(items, list):
        raise SchemaError("experiment.spaces must be a list of tables")
    for item in items:
        if not isinstance(item, dict):
            raise SchemaError("each entry of experiment.spaces must be a table")
        _check_keys("experiment.spaces", item, {"method", "k", "n_neighbors", "distances"})
        ks = item.get("k")
        ks = [None] if ks is None else (ks if isinstance(ks, list) else [ks])
        for k in ks:
            kw = {"method": item.get("method"), "k": k}
            if "n_neighbors" in item:
                kw["n_neighbors"] = item["n_neighbors"]
            if "distances" in item:
                if not isinstance(item["distances"], list):
                    raise SchemaError("experiment.spaces distances must be a list")
                kw["distances"] = tuple(item["distances"])
            out.append(SpaceSpec(**kw))
    return tuple(out)


def config_from_dict(doc):
    """Build and validate an :class:`ExperimentConfig` from parsed TOML."""
    _check_keys("top level", doc, _SECTIONS)
    ds_doc = dict(doc.get("dataset", {}))
    _check_keys("dataset", ds_doc, {f.name for f in fields(DatasetSpec)})
    ex_doc = dict(doc.get("experiment", {}))
    allowed = {f.name for f in fields(ExperimentConfig)} - {"dataset", "geodesic"}
    _check_keys("experiment", ex_doc, allowed)
    geo_doc = dict(doc.get("geodesic", {}))
    _check_keys("geodesic", geo_doc, {f.name for f in fields(GeodesicOptions)})
    try:
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in ex_doc.items() if k != "spaces"}
        if "spaces" in ex_doc:
            kwargs["spaces"] = _spaces(ex_doc["spaces"])
        return ExperimentConfig(
            dataset=DatasetSpec(**ds_doc), geodesic=GeodesicOptions(**geo_doc), **kwargs
        )
    except TypeError as exc:
        raise SchemaError(f"invalid configuration value: {exc}") from exc


def load_config(path, overrides=()):
    """Read a TOML config; ``overrides`` are ``section.key=value`` strings."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise InvalidArgumentError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    for item in overrides:
        apply_override(doc, item)
    return config_from_dict(doc)


def apply_override(doc, item):
    """Apply one ``section.key=value`` override; the value is parsed as TOML."""
    if "=" not in item:
        raise InvalidArgumentError(f"override {item!r} is not of the form section.key=value")
    path, raw = item.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise InvalidArgumentError(f"override key {path!r} must be one of {sorted(_SECTIONS)}.<key>")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    doc.setdefault(parts[0], {})[parts[1]] = value


def with_dataset(config, **changes):
    return replace(config, dataset=replace(config.dataset, **changes))
