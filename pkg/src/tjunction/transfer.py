"""Transferring learned policies to unseen intersection environments.

A library stores one set of learned policy parameters per visited environment.
For a query environment, a normalized Gaussian kernel over the environment
embeddings produces weights that sum to one across the library, and the
transferred policy parameters are the weighted sum of the stored parameter
arrays.  Nearest-neighbor lookup and count pooling are the two baselines.
"""

import dataclasses
import json
import pathlib

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .domain import EnvironmentState, all_environment_states
from .learning import DirichletPolicyParams, TransitionCounts, posterior, save_policy_params, load_policy_params
from .validation import check_positive

__all__ = [
    "EnvironmentState",
    "all_environment_states",
    "EmptyLibraryError",
    "KernelConfig",
    "ExperienceLibrary",
    "kernel_raw",
    "kernel_weights",
    "filter_policy",
    "nearest_neighbor_policy",
    "pooled_policy",
    "save_library",
    "load_library",
    "ExperienceFilter",
    "NearestNeighborPolicy",
]

_MANIFEST_NAME = "manifest.json"


class EmptyLibraryError(ValueError):
    """The experience library holds no entries."""


@dataclasses.dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel hyperparameters: amplitude ``sigma``, width ``lengthscale``."""

    sigma: float = 1.0
    lengthscale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_positive(self.sigma, "sigma"))
        object.__setattr__(self, "lengthscale", check_positive(self.lengthscale, "lengthscale"))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _as_embedding(x):
    if isinstance(x, EnvironmentState):
        return x.embedding
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"environment embedding must be a vector, got shape {arr.shape}")
    return arr


class ExperienceLibrary:
    """Ordered collection of (environment, policy parameters) entries."""

    def __init__(self, entries):
        entries = list(entries)
        seen = set()
        for env, params in entries:
            if not isinstance(env, EnvironmentState):
                raise ValueError(f"library keys must be EnvironmentState, got {type(env)!r}")
            if not isinstance(params, DirichletPolicyParams):
                raise ValueError("library values must be DirichletPolicyParams")
            if env in seen:
                raise ValueError(f"duplicate environment in library: {env.label}")
            seen.add(env)
        shapes = {params.params.shape for _, params in entries}
        if len(shapes) > 1:
            raise ValueError(f"library entries have mismatched shapes: {shapes}")
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    @property
    def environments(self):
        return [env for env, _ in self.entries]

    def embeddings(self):
        if not self.entries:
            raise EmptyLibraryError("library is empty")
        return np.stack([env.embedding for env, _ in self.entries])

    def params_stack(self):
        if not self.entries:
            raise EmptyLibraryError("library is empty")
        return np.stack([params.params for _, params in self.entries])


def kernel_raw(x_query, x_entry, config=None):
    """Unnormalized Gaussian kernel ``sigma^2 * exp(-|dx|^2 / (2 * lengthscale^2))``."""
    config = config or KernelConfig()
    delta = _as_embedding(x_query) - _as_embedding(x_entry)
    sq = float(delta @ delta)
    return config.sigma**2 * np.exp(-sq / (2.0 * config.lengthscale**2))


def kernel_weights(x_query, library, config=None):
    """Kernel weights against every library entry, normalized to sum to one.

    The amplitude cancels under normalization and is dropped before
    exponentiating; the smallest squared distance is subtracted first so that
    tiny lengthscales cannot underflow every weight to zero.
    """
    config = config or KernelConfig()
    if len(library) == 0:
        raise EmptyLibraryError("cannot compute weights against an empty library")
    query = _as_embedding(x_query)
    deltas = library.embeddings() - query
    sq = np.einsum("ij,ij->i", deltas, deltas)
    shifted = (sq - sq.min()) / (2.0 * config.lengthscale**2)
    raw = np.exp(-shifted)
    return raw / raw.sum()


def filter_policy(x_query, library, config=None):
    """Blend the library's parameter arrays with the normalized kernel weights."""
    weights = kernel_weights(x_query, library, config)
    blended = np.einsum("i,iabc->abc", weights, library.params_stack())
    env = x_query if isinstance(x_query, EnvironmentState) else None
    return DirichletPolicyParams(blended, env=env)


def nearest_neighbor_policy(x_query, library):
    """Parameters of the entry nearest in embedding space, lowest index on ties."""
    if len(library) == 0:
        raise EmptyLibraryError("cannot query an empty library")
    deltas = library.embeddings() - _as_embedding(x_query)
    sq = np.einsum("ij,ij->i", deltas, deltas)
    return library.entries[int(np.argmin(sq))][1]


def pooled_policy(count_sets):
    """Posterior from all counts pooled under a single shared prior.

    ``count_sets`` is a sequence of (prior, counts) pairs; every prior must be
    identical since the pool is a single Dirichlet posterior.
    """
    count_sets = list(count_sets)
    if not count_sets:
        raise ValueError("count_sets must not be empty")
    prior = count_sets[0][0]
    for other, _ in count_sets[1:]:
        if not np.array_equal(other.alpha, prior.alpha):
            raise ValueError("pooled_policy requires one shared prior")
    total = np.zeros_like(count_sets[0][1].m)
    for _, counts in count_sets:
        total = total + counts.m
    return posterior(prior, TransitionCounts(total))


def save_library(directory, library, config):
    """Persist a library as one params file per entry plus a JSON manifest."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"kernel": config.to_dict(), "entries": []}
    for env, params in library.entries:
        filename = f"params_{env.label}.npz"
        tagged = params if params.env is not None else DirichletPolicyParams(params.params, env=env)
        save_policy_params(directory / filename, tagged)
        manifest["entries"].append({"env": env.to_dict(), "file": filename})
    with open(directory / _MANIFEST_NAME, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)


def load_library(directory):
    """Load a library saved by :func:`save_library`; returns (library, kernel config)."""
    directory = pathlib.Path(directory)
    with open(directory / _MANIFEST_NAME, "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    entries = []
    for entry in manifest["entries"]:
        env = EnvironmentState.from_dict(entry["env"])
        params = load_policy_params(directory / entry["file"])
        entries.append((env, params))
    return ExperienceLibrary(entries), KernelConfig.from_dict(manifest["kernel"])


class ExperienceFilter(BaseEstimator):
    """Kernel regression from environment embeddings to policy parameters.

    ``fit`` stores the library; ``predict`` returns blended parameters for one
    environment or a list of them.  The estimator follows the scikit-learn
    parameter protocol so it can be cloned and grid-searched.
    """

    def __init__(self, sigma=1.0, lengthscale=0.5):
        self.sigma = sigma
        self.lengthscale = lengthscale

    def _config(self):
        return KernelConfig(sigma=self.sigma, lengthscale=self.lengthscale)

    def fit(self, X, y):
        """Store (environment, parameters) pairs.

        ``X`` is a sequence of :class:`EnvironmentState`; ``y`` a matching
        sequence of :class:`DirichletPolicyParams` or raw parameter arrays.
        """
        if len(X) != len(y):
            raise ValueError(f"X and y lengths differ: {len(X)} != {len(y)}")
        entries = []
        for env, params in zip(X, y):
            if not isinstance(params, DirichletPolicyParams):
                params = DirichletPolicyParams(np.asarray(params, dtype=np.float64), env=env)
            entries.append((env, params))
        self.library_ = ExperienceLibrary(entries)
        self.n_features_in_ = 3
        return self

    def _check_fitted(self):
        if not hasattr(self, "library_"):
            raise NotFittedError("this estimator is not fitted yet; call fit first")

    def kernel_weights(self, X):
        """Normalized weights for one query or a sequence of queries."""
        self._check_fitted()
        if isinstance(X, EnvironmentState) or (np.ndim(X) == 1 and not isinstance(X, (list, tuple))):
            return kernel_weights(X, self.library_, self._config())
        return np.stack([kernel_weights(x, self.library_, self._config()) for x in X])

    def predict(self, X):
        self._check_fitted()
        if isinstance(X, EnvironmentState):
            return filter_policy(X, self.library_, self._config())
        return [filter_policy(x, self.library_, self._config()) for x in X]


class NearestNeighborPolicy(BaseEstimator):
    """Returns the stored parameters of the nearest environment in embedding space."""

    def __init__(self):
        pass

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError(f"X and y lengths differ: {len(X)} != {len(y)}")
        entries = []
        for env, params in zip(X, y):
            if not isinstance(params, DirichletPolicyParams):
                params = DirichletPolicyParams(np.asarray(params, dtype=np.float64), env=env)
            entries.append((env, params))
        self.library_ = ExperienceLibrary(entries)
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        if not hasattr(self, "library_"):
            raise NotFittedError("this estimator is not fitted yet; call fit first")
        if isinstance(X, EnvironmentState):
            return nearest_neighbor_policy(X, self.library_)
        return [nearest_neighbor_policy(x, self.library_) for x in X]
