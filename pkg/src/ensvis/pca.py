"""Principal-component fitting and projection for feature compression.

Covariance uses the 1/(N-1) convention, so eigenvalues equal the sample
variance of the corresponding projected coordinates. When there are fewer
samples than feature dimensions the decomposition runs on the N x N Gram
matrix instead of the D x D covariance, which keeps 18k-dimensional
activation features tractable.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DimensionError, FormatError, TruncationError
from .validation import as_matrix

PCA_MAGIC = b"PCA1"


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (q, D), orthonormal rows
    eigenvalues: np.ndarray  # (q,), non-increasing

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def validate_pca_request(n_samples: int, n_features: int, q: int) -> None:
    """Reject target dimensions the data cannot support."""
    if n_samples < 2:
        raise DimensionError("need at least 2 samples to fit")
    if not 1 <= q <= min(n_samples - 1, n_features):
        raise DimensionError(
            f"q={q} out of range for {n_samples} samples of dim {n_features}"
        )


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make each axis's largest-magnitude coordinate positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def fit_pca(data, q: int) -> PcaModel:
    data = as_matrix(data, "data")
    n, d = data.shape
    validate_pca_request(n, d, q)
    mean = data.mean(axis=0)
    centered = data - mean
    if n <= d:
        # Gram trick: eigenvectors of X X^T lift to covariance eigenvectors.
        gram = centered @ centered.T
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1][:q]
        evals = np.maximum(evals[order], 0.0)
        axes = centered.T @ evecs[:, order]
        norms = np.linalg.norm(axes, axis=0)
        norms[norms == 0] = 1.0
        components = (axes / norms).T
        eigenvalues = evals / (n - 1)
    else:
        cov = centered.T @ centered / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:q]
        eigenvalues = np.maximum(evals[order], 0.0)
        components = evecs[:, order].T
    return PcaModel(
        mean=mean,
        components=_fix_signs(np.ascontiguousarray(components)),
        eigenvalues=eigenvalues,
    )


def project(model: PcaModel, x):
    """Project vectors onto the principal axes after centering."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_features:
        raise DimensionError(
            f"input dim {x.shape[-1]} != model dim {model.n_features}"
        )
    return (x - model.mean) @ model.components.T


def save_pca(model: PcaModel, path) -> None:
    """Write the ``PCA1`` blob: D, q, mean, components, eigenvalues (f64 LE)."""
    with open(path, "wb") as fh:
        fh.write(PCA_MAGIC)
        fh.write(struct.pack("<II", model.n_features, model.n_components))
        fh.write(model.mean.astype("<f8").tobytes())
        fh.write(model.components.astype("<f8").tobytes())
        fh.write(model.eigenvalues.astype("<f8").tobytes())


def load_pca(path) -> PcaModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PCA_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    d, q = struct.unpack_from("<II", blob, 4)
    expected = 12 + 8 * (d + q * d + q)
    if len(blob) != expected:
        raise TruncationError(f"{path}: {len(blob)} bytes, expected {expected}")
    mean = np.frombuffer(blob, dtype="<f8", count=d, offset=12)
    comps = np.frombuffer(blob, dtype="<f8", count=q * d, offset=12 + 8 * d)
    evals = np.frombuffer(blob, dtype="<f8", count=q, offset=12 + 8 * d + 8 * q * d)
    return PcaModel(
        mean=mean.copy(), components=comps.reshape(q, d).copy(), eigenvalues=evals.copy()
    )


class PrincipalComponents(BaseEstimator, TransformerMixin):
    """Estimator facade over :func:`fit_pca` / :func:`project`."""

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        self.model_ = fit_pca(X, self.n_components)
        return self

    def transform(self, X):
        return project(self.model_, as_matrix(X, "X"))
