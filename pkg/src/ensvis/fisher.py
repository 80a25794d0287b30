"""Fisher Vector encoding of descriptor sets against a diagonal GMM.

An image's descriptor sample is summarized by the gradient of the mixture
log-likelihood with respect to the component means and standard
deviations, scaled by the closed-form inverse square root of the
information matrix for a diagonal mixture. Mean blocks come first, then
variance blocks, giving a vector of length 2*K*D.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .codebook import DiagonalGmm, GmmParams, responsibilities
from .errors import DimensionError, EmptySampleError, NumericalFailureError
from .validation import as_matrix

#: Posterior mass below this is zeroed; denormal-range responsibilities
#: contribute nothing and only slow the reductions down.
GAMMA_FLOOR = 1e-12

POWER_EXPONENT = 0.5


@dataclass
class FisherVector:
    values: np.ndarray  # (2 * K * D,)
    gmm_id: str
    normalized: bool


def gmm_fingerprint(params: GmmParams) -> str:
    """Stable provenance hash of the mixture parameters."""
    h = hashlib.sha256()
    for arr in (params.weights, params.means, params.variances):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def encode_fv(params: GmmParams, descriptors) -> FisherVector:
    """Unnormalized Fisher Vector of one descriptor sample."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2:
        raise DimensionError(f"descriptors must be 2-D, got {descriptors.shape}")
    t = descriptors.shape[0]
    if t == 0:
        raise EmptySampleError("cannot encode an empty descriptor set")
    if descriptors.shape[1] != params.n_features:
        raise DimensionError(
            f"descriptor dim {descriptors.shape[1]} != model dim {params.n_features}"
        )
    # Reduce in canonical row order so the encoding is bitwise independent
    # of how the caller happened to order the descriptors.
    descriptors = descriptors[np.lexsort(descriptors.T[::-1])]
    gamma = responsibilities(params, descriptors).gamma
    gamma = np.where(gamma < GAMMA_FLOOR, 0.0, gamma)
    sigma = np.sqrt(params.variances)  # (K, D)
    # Accumulate sum_t gamma_tk and the first two gamma-weighted moments.
    s0 = gamma.sum(axis=0)  # (K,)
    s1 = gamma.T @ descriptors  # (K, D)
    s2 = gamma.T @ (descriptors**2)  # (K, D)
    u = (s1 - params.means * s0[:, None]) / sigma
    v = (s2 - 2.0 * params.means * s1 + (params.means**2) * s0[:, None]) / (
        params.variances
    ) - s0[:, None]
    mean_block = u / (t * np.sqrt(params.weights)[:, None])
    var_block = v / (t * np.sqrt(2.0 * params.weights)[:, None])
    values = np.concatenate([mean_block.ravel(), var_block.ravel()])
    return FisherVector(values=values, gmm_id=gmm_fingerprint(params), normalized=False)


def normalize_fv(fv: FisherVector) -> FisherVector:
    """Signed square root followed by global L2 normalization."""
    if fv.normalized:
        raise ValueError("vector is already normalized")
    z = fv.values
    if not np.all(np.isfinite(z)):
        raise NumericalFailureError("non-finite entries in Fisher Vector")
    powered = np.sign(z) * np.abs(z) ** POWER_EXPONENT
    norm = np.linalg.norm(powered)
    if norm > 0:
        powered = powered / norm
    return FisherVector(values=powered, gmm_id=fv.gmm_id, normalized=True)


class FisherVectorEncoder(BaseEstimator, TransformerMixin):
    """Transformer mapping descriptor matrices to normalized Fisher Vectors.

    ``fit`` trains the underlying vocabulary on the stacked descriptors;
    pass a prefitted ``GmmParams`` as ``gmm`` to skip that.
    """

    def __init__(self, n_components=64, seed=0, gmm=None, normalize=True):
        self.n_components = n_components
        self.seed = seed
        self.gmm = gmm
        self.normalize = normalize

    def fit(self, X, y=None):
        if self.gmm is not None:
            self.gmm_ = self.gmm
        else:
            stacked = np.vstack([as_matrix(x, "descriptors") for x in X])
            self.gmm_ = (
                DiagonalGmm(n_components=self.n_components, seed=self.seed)
                .fit(stacked)
                .params_
            )
        return self

    def transform(self, X):
        vectors = []
        for sample in X:
            fv = encode_fv(self.gmm_, sample)
            if self.normalize:
                fv = normalize_fv(fv)
            vectors.append(fv.values)
        return np.vstack(vectors)
