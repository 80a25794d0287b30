"""Diagonal-covariance Gaussian mixture vocabulary for local descriptors.

The mixture defines the generative likelihood whose score vectors the
Fisher encoder consumes. All density work happens in the log domain with
log-sum-exp stabilization; M-steps floor the variances so near-duplicate
descriptors cannot collapse a component.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DimensionError, FormatError, NumericalFailureError, TruncationError
from .validation import as_matrix

VARIANCE_FLOOR = 1e-4
GMM_MAGIC = b"GMM1"


@dataclass
class GmmParams:
    """Weights, means, and diagonal variances of a K-component mixture."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.shape != self.variances.shape:
            raise DimensionError("means and variances shapes differ")
        if self.weights.shape != (self.means.shape[0],):
            raise DimensionError("weight count does not match component count")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights <= 0):
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError(f"variances must be >= {VARIANCE_FLOOR}")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]


@dataclass
class Responsibilities:
    """Per-descriptor posterior component assignments."""

    gamma: np.ndarray  # (T, K), rows sum to 1


def _log_gaussians(params: GmmParams, data: np.ndarray) -> np.ndarray:
    """Per-point, per-component log w_k + log N(x; mu_k, sigma2_k)."""
    x2 = data**2
    inv = 1.0 / params.variances
    # Expand ||(x - mu) / sigma||^2 so the whole E-step is three matmuls.
    quad = (
        x2 @ inv.T
        - 2.0 * data @ (params.means * inv).T
        + np.sum(params.means**2 * inv, axis=1)
    )
    log_norm = -0.5 * (
        params.n_features * np.log(2.0 * np.pi) + np.sum(np.log(params.variances), axis=1)
    )
    return np.log(params.weights) + log_norm - 0.5 * quad


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def log_likelihood(params: GmmParams, data) -> float:
    """Total log-density of the sample under the mixture."""
    data = as_matrix(data, "data")
    if data.shape[1] != params.n_features:
        raise DimensionError(
            f"data dim {data.shape[1]} != model dim {params.n_features}"
        )
    return float(np.sum(_logsumexp_rows(_log_gaussians(params, data))))


def responsibilities(params: GmmParams, data) -> Responsibilities:
    """Posterior component probabilities for every row of ``data``."""
    data = as_matrix(data, "data")
    if data.shape[1] != params.n_features:
        raise DimensionError(
            f"data dim {data.shape[1]} != model dim {params.n_features}"
        )
    log_joint = _log_gaussians(params, data)
    gamma = np.exp(log_joint - _logsumexp_rows(log_joint)[:, None])
    return Responsibilities(gamma=gamma)


def _kmeans_pp_seeds(data, k, rng):
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = data[rng.integers(n)]
            continue
        centers[i] = data[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((data - centers[i]) ** 2, axis=1))
    return centers


def init_kmeans(data, n_components: int, seed: int, max_lloyd_iter: int = 25) -> GmmParams:
    """Seed a mixture from k-means++ centroids and per-cluster statistics."""
    data = as_matrix(data, "data")
    n, d = data.shape
    if n < n_components:
        raise ValueError(f"need at least {n_components} points, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_seeds(data, n_components, rng)
    assign = None
    for _ in range(max_lloyd_iter):
        d2 = (
            np.sum(data**2, axis=1)[:, None]
            - 2.0 * data @ centers.T
            + np.sum(centers**2, axis=1)
        )
        new_assign = np.argmin(d2, axis=1)
        for k in range(n_components):
            mask = new_assign == k
            if mask.any():
                centers[k] = data[mask].mean(axis=0)
            else:
                # Empty cluster: restart it from the point farthest from
                # its current centroid assignment.
                farthest = np.argmax(np.min(d2, axis=1))
                centers[k] = data[farthest]
                new_assign[farthest] = k
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    weights = np.bincount(assign, minlength=n_components).astype(np.float64)
    variances = np.empty_like(centers)
    for k in range(n_components):
        mask = assign == k
        variances[k] = data[mask].var(axis=0) if mask.any() else 1.0
    weights = np.maximum(weights, 1.0)
    weights /= weights.sum()
    return GmmParams(
        weights=weights,
        means=centers,
        variances=np.maximum(variances, VARIANCE_FLOOR),
    )


def em_fit(data, init: GmmParams, max_iter: int = 100, tol: float = 1e-5):
    """Run EM from ``init``; returns the fit and the per-point LL trace.

    The trace holds one mean log-likelihood entry per E-step, including the
    one evaluated at ``init`` itself, so monotonicity is checkable from the
    outside.
    """
    data = as_matrix(data, "data")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    t = data.shape[0]
    params = init
    trace = []
    for it in range(max_iter + 1):
        log_joint = _log_gaussians(params, data)
        row_ll = _logsumexp_rows(log_joint)
        ll = float(np.mean(row_ll))
        if not np.isfinite(ll):
            raise NumericalFailureError(f"non-finite log-likelihood at iteration {it}")
        trace.append(ll)
        if it == max_iter or (len(trace) > 1 and ll - trace[-2] < tol):
            break
        gamma = np.exp(log_joint - row_ll[:, None])
        nk = gamma.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        means = (gamma.T @ data) / nk[:, None]
        second = (gamma.T @ (data**2)) / nk[:, None]
        variances = np.maximum(second - means**2, VARIANCE_FLOOR)
        params = GmmParams(weights=nk / t, means=means, variances=variances)
    return params, np.asarray(trace)


def save_gmm(params: GmmParams, path) -> None:
    """Write the ``GMM1`` little-endian blob: K, D, weights, means, variances."""
    with open(path, "wb") as fh:
        fh.write(GMM_MAGIC)
        fh.write(struct.pack("<II", params.n_components, params.n_features))
        fh.write(params.weights.astype("<f8").tobytes())
        fh.write(params.means.astype("<f8").tobytes())
        fh.write(params.variances.astype("<f8").tobytes())


def load_gmm(path) -> GmmParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GMM_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    k, d = struct.unpack_from("<II", blob, 4)
    expected = 12 + 8 * (k + 2 * k * d)
    if len(blob) != expected:
        raise TruncationError(f"{path}: {len(blob)} bytes, expected {expected}")
    w = np.frombuffer(blob, dtype="<f8", count=k, offset=12)
    m = np.frombuffer(blob, dtype="<f8", count=k * d, offset=12 + 8 * k)
    v = np.frombuffer(blob, dtype="<f8", count=k * d, offset=12 + 8 * k + 8 * k * d)
    return GmmParams(
        weights=w.copy(), means=m.reshape(k, d).copy(), variances=v.reshape(k, d).copy()
    )


class DiagonalGmm(BaseEstimator):
    """Estimator facade over k-means++ initialization and EM fitting.

    Parameters follow the usual estimator convention: set in ``__init__``,
    learned state lands in trailing-underscore attributes after ``fit``.
    """

    def __init__(
        self,
        n_components=64,
        max_iter=100,
        tol=1e-5,
        seed=0,
        max_points=200_000,
    ):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed
        self.max_points = max_points

    def fit(self, X, y=None):
        X = as_matrix(X, "X")
        if self.max_points and X.shape[0] > self.max_points:
            rng = np.random.default_rng(self.seed)
            idx = np.sort(rng.choice(X.shape[0], size=self.max_points, replace=False))
            X = X[idx]
        init = init_kmeans(X, self.n_components, seed=self.seed)
        self.params_, self.trace_ = em_fit(X, init, self.max_iter, self.tol)
        return self

    def predict_proba(self, X):
        return responsibilities(self.params_, X).gamma

    def score(self, X, y=None):
        X = as_matrix(X, "X")
        return log_likelihood(self.params_, X) / X.shape[0]
