"""Linear maximum-margin classifiers trained by dual coordinate descent.

The binary solver minimizes 0.5*||w||^2 + C * sum_i max(0, 1 - y_i f(x_i))
over its dual, one coordinate at a time. The bias is carried as an
augmented constant feature of scale 1, so it is regularized like any other
weight. Multiclass classification is one-vs-rest with a shared C.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import DegenerateLabelsError, DimensionError, FormatError, TruncationError
from .validation import as_matrix, as_vector

SVM_MAGIC = b"SVMK"
DEFAULT_EPOCHS = 1000
DEFAULT_TOL = 1e-3


@dataclass
class LinearModel:
    w: np.ndarray  # (D,)
    b: float
    C: float
    feature_tag: str = ""

    def decision(self, x):
        return np.asarray(x, dtype=np.float64) @ self.w + self.b


@dataclass
class MulticlassModel:
    models: list  # one LinearModel per class, in label-table order
    labels: np.ndarray  # (K,) class table

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.models) != self.labels.shape[0]:
            raise DimensionError("one binary model required per class label")
        if np.unique(self.labels).shape[0] != self.labels.shape[0]:
            raise ValueError("class table must be bijective")

    @property
    def n_classes(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.models[0].w.shape[0]


def dual_coordinate_descent(X, y, C, epochs=DEFAULT_EPOCHS, tol=DEFAULT_TOL, seed=0):
    """Solve the hinge-loss dual; returns (w_aug, alpha, dual objective trace).

    ``w_aug`` has the bias as its last entry. The trace holds the dual
    objective (maximization form) after every full sweep, and the sweep
    loop stops once the largest projected gradient in a sweep drops below
    ``tol``.
    """
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    n, d = X.shape
    if y.shape[0] != n:
        raise DimensionError("label count does not match sample count")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1/-1")
    if np.unique(y).shape[0] < 2:
        raise DegenerateLabelsError("both classes must be present")
    Xa = np.hstack([X, np.ones((n, 1))])
    qii = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    rng = np.random.default_rng(seed)
    trace = []
    for _ in range(epochs):
        max_pg = 0.0
        for i in rng.permutation(n):
            g = y[i] * (w @ Xa[i]) - 1.0
            if alpha[i] <= 0.0:
                pg = min(g, 0.0)
            elif alpha[i] >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                max_pg = max(max_pg, abs(pg))
                new = min(max(alpha[i] - g / qii[i], 0.0), C)
                if new != alpha[i]:
                    w += (new - alpha[i]) * y[i] * Xa[i]
                    alpha[i] = new
        trace.append(alpha.sum() - 0.5 * (w @ w))
        if max_pg < tol:
            break
    return w, alpha, np.asarray(trace)


def train_binary(X, y, C=1.0, epochs=DEFAULT_EPOCHS, seed=0, tol=DEFAULT_TOL,
                 feature_tag="") -> LinearModel:
    w, _, _ = dual_coordinate_descent(X, y, C, epochs=epochs, tol=tol, seed=seed)
    return LinearModel(w=w[:-1].copy(), b=float(w[-1]), C=C, feature_tag=feature_tag)


def train_ovr(X, labels, C=1.0, epochs=DEFAULT_EPOCHS, seed=0, tol=DEFAULT_TOL,
              classes=None, feature_tag="") -> MulticlassModel:
    """One binary model per class against the rest, shared C."""
    X = as_matrix(X, "X")
    labels = np.asarray(labels, dtype=np.int64)
    if classes is None:
        classes = np.unique(labels)
    classes = np.asarray(classes, dtype=np.int64)
    if classes.shape[0] < 2:
        raise DegenerateLabelsError("need at least 2 classes")
    models = []
    for k, cls in enumerate(classes):
        y = np.where(labels == cls, 1.0, -1.0)
        models.append(
            train_binary(X, y, C=C, epochs=epochs, seed=seed + k, tol=tol,
                         feature_tag=feature_tag)
        )
    return MulticlassModel(models=models, labels=classes)


def decision_values(model: MulticlassModel, x):
    """Per-class affine scores; rows follow the model's label table."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_features:
        raise DimensionError(
            f"input dim {x.shape[-1]} != model dim {model.n_features}"
        )
    W = np.stack([m.w for m in model.models])
    b = np.array([m.b for m in model.models])
    return x @ W.T + b


def predict(model: MulticlassModel, x):
    """Label of the largest decision value; ties go to the lowest index."""
    scores = decision_values(model, x)
    return model.labels[np.argmax(scores, axis=-1)]


def cross_validate_c(X, labels, grid, epochs=DEFAULT_EPOCHS, seed=0, folds=3):
    """Pick C from ``grid`` by deterministic k-fold accuracy; ties prefer
    the smaller C."""
    grid = sorted(set(float(c) for c in grid))
    if len(grid) == 1:
        return grid[0]
    X = as_matrix(X, "X")
    labels = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % folds
    best_c, best_acc = grid[0], -1.0
    for c in grid:
        hits = 0
        for f in range(folds):
            train, held = fold_of != f, fold_of == f
            if np.unique(labels[train]).shape[0] < 2:
                continue
            model = train_ovr(X[train], labels[train], C=c, epochs=epochs, seed=seed)
            hits += int(np.sum(predict(model, X[held]) == labels[held]))
        acc = hits / n
        if acc > best_acc:
            best_c, best_acc = c, acc
    return best_c


def save_svm(model: MulticlassModel, path) -> None:
    """Write the ``SVMK`` blob: K, D, per-class (w, b) f64, label table u32."""
    with open(path, "wb") as fh:
        fh.write(SVM_MAGIC)
        fh.write(struct.pack("<II", model.n_classes, model.n_features))
        for m in model.models:
            fh.write(m.w.astype("<f8").tobytes())
            fh.write(struct.pack("<d", m.b))
        fh.write(model.labels.astype("<u4").tobytes())


def load_svm(path) -> MulticlassModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SVM_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    k, d = struct.unpack_from("<II", blob, 4)
    expected = 12 + 8 * k * (d + 1) + 4 * k
    if len(blob) != expected:
        raise TruncationError(f"{path}: {len(blob)} bytes, expected {expected}")
    models = []
    off = 12
    for _ in range(k):
        w = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
        (b,) = struct.unpack_from("<d", blob, off + 8 * d)
        models.append(LinearModel(w=w, b=b, C=float("nan")))
        off += 8 * (d + 1)
    labels = np.frombuffer(blob, dtype="<u4", count=k, offset=off).astype(np.int64)
    return MulticlassModel(models=models, labels=labels)


class MaxMarginClassifier(BaseEstimator, ClassifierMixin):
    """Estimator facade over one-vs-rest dual coordinate descent."""

    def __init__(self, C=1.0, epochs=DEFAULT_EPOCHS, tol=DEFAULT_TOL, seed=0):
        self.C = C
        self.epochs = epochs
        self.tol = tol
        self.seed = seed

    def fit(self, X, y):
        self.model_ = train_ovr(
            X, y, C=self.C, epochs=self.epochs, seed=self.seed, tol=self.tol
        )
        self.classes_ = self.model_.labels
        return self

    def decision_function(self, X):
        return decision_values(self.model_, as_matrix(X, "X"))

    def predict(self, X):
        return predict(self.model_, as_matrix(X, "X"))
