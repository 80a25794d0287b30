"""Per-feature classifier ensembles combined by hard majority voting.

Each feature stream (the Fisher-encoded local descriptors, a single deep
layer, or a PCA-reduced concatenation of deep layers) trains its own
one-vs-rest classifier. At prediction time every member casts exactly one
vote; the class with the largest count wins. Argmax ties fall to the
configured policy: by default the tied class with the largest summed
decision value, then the lowest class index.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import svm
from .errors import (
    ConsistencyError,
    DegenerateEnsembleError,
    DimensionError,
    IncompleteInputError,
    RegistryError,
)
from .featstore import FeatureRegistry
from .pca import PcaModel, fit_pca, load_pca, project, save_pca
from .validation import l2_normalize_rows

TIE_LOWEST_INDEX = "lowest-index"
TIE_MAX_CONFIDENCE_SUM = "max-confidence-sum"
TIE_POLICIES = (TIE_LOWEST_INDEX, TIE_MAX_CONFIDENCE_SUM)

SIFT_FV = "sift-fv"
DEEP = "deep"
FUSED = "fused"

#: Default deep-stream membership: the individually reported activation
#: taps, included when the registry has them.
DEFAULT_DEEP_MEMBERS = (
    ("vgg16", 5),
    ("vgg16", 6),
    ("vgg16", 7),
    ("alexnet", 4),
    ("alexnet", 6),
    ("alexnet", 7),
)

#: Named fusion presets; both candidate member sets for the three-layer
#: fused configuration ship, plus the vgg16 counterpart.
STREAM_PRESETS = {
    "vgg567": "fused:vgg16:5,6,7:1000",
    "alexnet457": "fused:alexnet:4,5,7:1000",
    "alexnet467": "fused:alexnet:4,6,7:1000",
}

_DISPLAY_MODELS = {"vgg16": "VGGNet", "alexnet": "AlexNet"}


@dataclass(frozen=True)
class FeatureStream:
    """Where one ensemble member's features come from."""

    name: str
    source: str  # one of SIFT_FV, DEEP, FUSED
    model: str = ""
    layers: tuple = ()
    pca_dim: int | None = None

    def __post_init__(self):
        if self.source not in (SIFT_FV, DEEP, FUSED):
            raise ValueError(f"unknown stream source {self.source!r}")
        if self.source == DEEP and len(self.layers) != 1:
            raise ValueError("deep streams tap exactly one layer")
        if self.source == FUSED:
            if len(self.layers) < 2:
                raise ValueError("fused streams concatenate at least two layers")
            if self.pca_dim is None:
                raise ValueError("fused streams require a PCA target dimension")


def parse_stream(spec: str) -> FeatureStream:
    """Parse ``sift-fv``, ``deep:model:layer[:q]``, ``fused:model:l+l[+l]:q``,
    or a preset name.

    Fused layer lists use ``+`` so whole specs can live in comma-separated
    stream lists; a comma-separated layer list is accepted too.
    """
    spec = STREAM_PRESETS.get(spec.strip(), spec.strip())
    parts = spec.split(":")
    if parts[0] == SIFT_FV:
        q = int(parts[1]) if len(parts) > 1 else None
        return FeatureStream(name=SIFT_FV, source=SIFT_FV, pca_dim=q)
    if parts[0] == DEEP:
        if len(parts) not in (3, 4):
            raise ValueError(f"bad deep stream spec {spec!r}")
        layer = int(parts[2])
        q = int(parts[3]) if len(parts) == 4 else None
        return FeatureStream(
            name=f"{parts[1]}:{layer}", source=DEEP, model=parts[1],
            layers=(layer,), pca_dim=q,
        )
    if parts[0] == FUSED:
        if len(parts) != 4:
            raise ValueError(f"bad fused stream spec {spec!r}")
        layers = tuple(int(p) for p in parts[2].replace(",", "+").split("+"))
        return FeatureStream(
            name=f"{parts[1]}:{''.join(map(str, layers))}", source=FUSED,
            model=parts[1], layers=layers, pca_dim=int(parts[3]),
        )
    raise ValueError(f"unknown stream spec {spec!r}")


def stream_spec(stream: FeatureStream) -> str:
    """Inverse of :func:`parse_stream`."""
    if stream.source == SIFT_FV:
        return SIFT_FV if stream.pca_dim is None else f"sift-fv:{stream.pca_dim}"
    layers = "+".join(map(str, stream.layers))
    if stream.source == DEEP:
        base = f"deep:{stream.model}:{layers}"
        return base if stream.pca_dim is None else f"{base}:{stream.pca_dim}"
    return f"fused:{stream.model}:{layers}:{stream.pca_dim}"


def display_name(stream: FeatureStream) -> str:
    if stream.source == SIFT_FV:
        return "SIFT (FV)"
    model = _DISPLAY_MODELS.get(stream.model, stream.model)
    return f"{model} ({''.join(map(str, stream.layers))})"


@dataclass
class EnsembleMember:
    stream: FeatureStream
    classifier: svm.MulticlassModel
    pca: PcaModel | None = None

    def __post_init__(self):
        if self.stream.source == FUSED and self.pca is None:
            raise ValueError("fused members must carry their fitted PCA")


@dataclass
class EnsembleModel:
    members: list  # EnsembleMember, ordered
    labels: np.ndarray
    tie_break: str = TIE_MAX_CONFIDENCE_SUM

    def __post_init__(self):
        if not self.members:
            raise DegenerateEnsembleError("an ensemble needs at least one member")
        if self.tie_break not in TIE_POLICIES:
            raise ValueError(f"unknown tie policy {self.tie_break!r}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for m in self.members:
            if not np.array_equal(m.classifier.labels, self.labels):
                raise ValueError("all members must share one class table")

    @property
    def stream_names(self):
        return [m.stream.name for m in self.members]


class StreamFeatureProvider:
    """Resolves a stream's raw (pre-PCA) feature matrix from the registry.

    Fisher-encoded local features are ordinary registry entries under
    model ``sift-fv``, layer 0, so one lookup path serves every source.
    """

    def __init__(self, registry: FeatureRegistry):
        self.registry = registry

    def features(self, stream: FeatureStream, split: str):
        """Returns (ids, rows) with rows as float64."""
        try:
            if stream.source == SIFT_FV:
                ff = self.registry.load(SIFT_FV, 0, split)
                return ff.ids.astype(np.int64), ff.rows.astype(np.float64)
            parts = [
                self.registry.load(stream.model, layer, split)
                for layer in stream.layers
            ]
        except RegistryError as exc:
            raise RegistryError(f"stream '{stream.name}': {exc}") from exc
        ids = parts[0].ids
        for p in parts[1:]:
            if not np.array_equal(p.ids, ids):
                raise ConsistencyError(
                    f"stream '{stream.name}': layer files disagree on image ids"
                )
        rows = np.hstack([p.rows.astype(np.float64) for p in parts])
        return ids.astype(np.int64), rows


def _member_features(member: EnsembleMember, rows: np.ndarray) -> np.ndarray:
    if member.pca is not None:
        rows = project(member.pca, rows)
    return l2_normalize_rows(rows)


def train_ensemble(
    streams,
    provider,
    train_labels,
    C=1.0,
    c_grid=None,
    epochs=svm.DEFAULT_EPOCHS,
    seed=0,
    tie_break=TIE_MAX_CONFIDENCE_SUM,
    check_splits=True,
) -> EnsembleModel:
    """Train one classifier per stream on the train split.

    ``train_labels`` maps image id -> class index (array indexed by id).
    Streams with a PCA target fit it on training features only; fused
    streams concatenate their layers first. Features are L2-normalized
    per vector before training. When ``c_grid`` holds several values, each
    stream picks its own C by 3-fold cross-validation; otherwise the
    shared ``C`` applies.
    """
    streams = list(streams)
    if not streams:
        raise DegenerateEnsembleError("no streams configured")
    train_labels = np.asarray(train_labels)
    members = []
    labels_ref = None
    for i, stream in enumerate(streams):
        ids, rows = provider.features(stream, "train")
        if check_splits:
            _, test_rows = provider.features(stream, "test")
            if test_rows.shape[1] != rows.shape[1]:
                raise ConsistencyError(
                    f"stream '{stream.name}': train dim {rows.shape[1]} != "
                    f"test dim {test_rows.shape[1]}"
                )
        pca = None
        if stream.pca_dim is not None:
            pca = fit_pca(rows, stream.pca_dim)
            rows = project(pca, rows)
        rows = l2_normalize_rows(rows)
        y = train_labels[ids]
        c = float(C)
        if c_grid is not None and len(set(c_grid)) > 1:
            c = svm.cross_validate_c(rows, y, c_grid, epochs=epochs, seed=seed)
        classifier = svm.train_ovr(
            rows, y, C=c, epochs=epochs, seed=seed + 100 * i,
            feature_tag=stream.name,
        )
        if labels_ref is None:
            labels_ref = classifier.labels
        members.append(EnsembleMember(stream=stream, classifier=classifier, pca=pca))
    return EnsembleModel(members=members, labels=labels_ref, tie_break=tie_break)


def majority_vote(votes, confidences, policy=TIE_MAX_CONFIDENCE_SUM, labels=None):
    """Label with the most votes; ties resolved per ``policy``.

    ``confidences`` holds one K-vector of decision values per voter,
    aligned with ``votes``; ``labels`` gives the class table the K axis
    indexes (defaults to 0..K-1).
    """
    votes = list(votes)
    if not votes:
        raise DegenerateEnsembleError("cannot vote with zero members")
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.ndim != 2 or confidences.shape[0] != len(votes):
        raise DimensionError("one confidence vector required per vote")
    k = confidences.shape[1]
    labels = np.arange(k, dtype=np.int64) if labels is None else np.asarray(labels)
    index_of = {int(lab): i for i, lab in enumerate(labels)}
    counts = np.zeros(k, dtype=np.int64)
    for v in votes:
        counts[index_of[int(v)]] += 1
    best = counts.max()
    tied = np.nonzero(counts == best)[0]
    if len(tied) == 1 or policy == TIE_LOWEST_INDEX:
        return int(labels[tied[0]])
    if policy == TIE_MAX_CONFIDENCE_SUM:
        sums = confidences.sum(axis=0)[tied]
        return int(labels[tied[np.argmax(sums)]])
    raise ValueError(f"unknown tie policy {policy!r}")


def member_votes(model: EnsembleModel, features: dict):
    """Per-member predictions and decision values for a feature batch.

    ``features`` maps stream name -> raw feature matrix (rows aligned
    across streams). Returns (votes (M, N), scores (M, N, K)).
    """
    votes = []
    scores = []
    n = None
    for member in model.members:
        if member.stream.name not in features:
            raise IncompleteInputError(
                f"no features supplied for stream '{member.stream.name}'"
            )
        rows = np.asarray(features[member.stream.name], dtype=np.float64)
        single = rows.ndim == 1
        rows = rows[np.newaxis, :] if single else rows
        if n is None:
            n = rows.shape[0]
        elif rows.shape[0] != n:
            raise DimensionError("feature batches differ in row count")
        x = _member_features(member, rows)
        scores.append(svm.decision_values(member.classifier, x))
        votes.append(svm.predict(member.classifier, x))
    return np.stack(votes), np.stack(scores)


def predict_ensemble(model: EnsembleModel, features: dict):
    """Majority-vote prediction for one image or a batch.

    ``features`` maps stream name -> raw (pre-PCA) feature vector or
    matrix; every member stream must be present.
    """
    single = any(np.asarray(v).ndim == 1 for v in features.values())
    votes, scores = member_votes(model, features)
    preds = np.array(
        [
            majority_vote(
                votes[:, j], scores[:, j, :], policy=model.tie_break,
                labels=model.labels,
            )
            for j in range(votes.shape[1])
        ],
        dtype=np.int64,
    )
    return int(preds[0]) if single else preds


def save_ensemble(model: EnsembleModel, directory) -> str:
    """Persist as a key-value manifest plus one model file per member."""
    os.makedirs(directory, exist_ok=True)
    lines = [
        f"tie_break = {model.tie_break}",
        f"labels = {','.join(map(str, model.labels))}",
        f"members = {len(model.members)}",
    ]
    for i, member in enumerate(model.members):
        svm_file = f"member_{i}.svmk"
        svm.save_svm(member.classifier, os.path.join(directory, svm_file))
        lines.append(f"member.{i}.stream = {stream_spec(member.stream)}")
        lines.append(f"member.{i}.svm = {svm_file}")
        if member.pca is not None:
            pca_file = f"member_{i}.pca"
            save_pca(member.pca, os.path.join(directory, pca_file))
            lines.append(f"member.{i}.pca = {pca_file}")
    manifest = os.path.join(directory, "ensemble.manifest")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def _parse_manifest(path):
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def load_ensemble(directory) -> EnsembleModel:
    entries = _parse_manifest(os.path.join(directory, "ensemble.manifest"))
    labels = np.array([int(v) for v in entries["labels"].split(",")], dtype=np.int64)
    members = []
    for i in range(int(entries["members"])):
        stream = parse_stream(entries[f"member.{i}.stream"])
        classifier = svm.load_svm(os.path.join(directory, entries[f"member.{i}.svm"]))
        classifier.labels = labels.copy()
        pca = None
        if f"member.{i}.pca" in entries:
            pca = load_pca(os.path.join(directory, entries[f"member.{i}.pca"]))
        members.append(EnsembleMember(stream=stream, classifier=classifier, pca=pca))
    return EnsembleModel(
        members=members, labels=labels, tie_break=entries["tie_break"]
    )
