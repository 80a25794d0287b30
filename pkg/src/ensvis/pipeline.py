"""End-to-end orchestration: extract, encode, reduce, train, vote, report.

Every stage caches its artifacts under the feature directory, so reruns
skip finished work and scaled-down experiments iterate quickly:

    <feat_dir>/sift/<split>/img_<id>.dfv1   per-image local descriptors
    <feat_dir>/gmm.bin                      descriptor vocabulary
    <feat_dir>/<split>/sift-fv.dfv1         per-image Fisher Vectors
    <feat_dir>/<split>/<model>_<layer>.dfv1 ingested deep activations
    <feat_dir>/ensemble/                    trained ensemble
    <feat_dir>/report.{txt,csv}, report_votes.csv, report_timings.txt

Deep activation files are produced externally (any DFV1-compliant
exporter) and only consumed here.
"""

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import codebook, dataset, ensemble, fisher, sift
from .errors import ConsistencyError, EnsvisError, PipelineError
from .featstore import PCA_TARGETS, FeatureFile, FeatureRegistry, read_features, write_features

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0)


@dataclass
class RunConfig:
    data_dir: str
    feat_dir: str
    streams: list = field(default_factory=list)  # FeatureStream, ordered
    gmm_size: int = 64
    pca_targets: dict = field(default_factory=lambda: dict(PCA_TARGETS))
    c_grid: tuple = DEFAULT_C_GRID
    seed: int = 0
    subset: int = 0  # images per class per split; 0 = full split
    upscale: int = 2
    svm_epochs: int = 1000
    tie_break: str = ensemble.TIE_MAX_CONFIDENCE_SUM
    max_gmm_points: int = 200_000


@dataclass
class EvalReport:
    rows: list  # (display name, accuracy %) in report order
    confusion: np.ndarray  # (K, K), rows = truth, cols = prediction
    image_ids: np.ndarray
    truth: np.ndarray
    member_names: list
    member_votes: np.ndarray  # (M, N)
    ensemble_preds: np.ndarray  # (N,)
    seed: int
    timings: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return float(self.confusion.trace() / max(self.confusion.sum(), 1) * 100.0)


def evaluate(preds, truth, n_classes: int = dataset.NUM_CLASSES):
    """Accuracy percentage and confusion matrix (rows = truth)."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ValueError(f"{preds.shape[0]} predictions for {truth.shape[0]} labels")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    accuracy = 100.0 * confusion.trace() / max(truth.shape[0], 1)
    return accuracy, confusion


def subset_images(images, per_class: int):
    """First ``per_class`` ids of every class, original ids preserved."""
    if per_class <= 0:
        return list(images)
    taken = {}
    out = []
    for img in images:
        if taken.get(img.label, 0) < per_class:
            taken[img.label] = taken.get(img.label, 0) + 1
            out.append(img)
    return out


def _load_split(cfg: RunConfig, split: str):
    images = dataset.load_cifar10(cfg.data_dir, split)
    return subset_images(images, cfg.subset)


def _sift_dir(cfg, split):
    return os.path.join(cfg.feat_dir, "sift", split)


def _fv_path(cfg, split):
    return os.path.join(cfg.feat_dir, split, "sift-fv.dfv1")


def stage_extract_sift(cfg: RunConfig, splits=("train", "test")) -> int:
    """Detect and describe local features for every image; cached per image."""
    written = 0
    for split in splits:
        out_dir = _sift_dir(cfg, split)
        os.makedirs(out_dir, exist_ok=True)
        for img in _load_split(cfg, split):
            path = os.path.join(out_dir, f"img_{img.id:07d}.dfv1")
            if os.path.exists(path):
                continue
            gray = dataset.preprocess(img, upscale=cfg.upscale)
            ds = sift.extract_sift(gray, image_id=img.id)
            write_features(
                FeatureFile(
                    model_name="sift",
                    layer_id=0,
                    ids=np.arange(ds.descriptors.shape[0], dtype=np.uint64),
                    rows=ds.descriptors.astype(np.float32),
                ),
                path,
            )
            written += 1
    return written


def _load_descriptors(cfg: RunConfig, split: str):
    """Per-image descriptor matrices keyed by image id, in id order."""
    out = {}
    sift_dir = _sift_dir(cfg, split)
    for img in _load_split(cfg, split):
        path = os.path.join(sift_dir, f"img_{img.id:07d}.dfv1")
        out[img.id] = read_features(path).rows.astype(np.float64)
    return out


def stage_train_gmm(cfg: RunConfig) -> codebook.GmmParams:
    gmm_path = os.path.join(cfg.feat_dir, "gmm.bin")
    if os.path.exists(gmm_path):
        return codebook.load_gmm(gmm_path)
    stacked = np.vstack(list(_load_descriptors(cfg, "train").values()))
    model = codebook.DiagonalGmm(
        n_components=cfg.gmm_size, seed=cfg.seed, max_points=cfg.max_gmm_points
    ).fit(stacked)
    codebook.save_gmm(model.params_, gmm_path)
    return model.params_


def stage_encode_fv(cfg: RunConfig, params=None, splits=("train", "test")):
    if params is None:
        params = codebook.load_gmm(os.path.join(cfg.feat_dir, "gmm.bin"))
    for split in splits:
        path = _fv_path(cfg, split)
        if os.path.exists(path):
            continue
        os.makedirs(os.path.dirname(path), exist_ok=True)
        descriptors = _load_descriptors(cfg, split)
        ids = sorted(descriptors)
        rows = np.stack(
            [
                fisher.normalize_fv(fisher.encode_fv(params, descriptors[i])).values
                for i in ids
            ]
        )
        write_features(
            FeatureFile(
                model_name="sift-fv",
                layer_id=0,
                ids=np.asarray(ids, dtype=np.uint64),
                rows=rows.astype(np.float32),
            ),
            path,
        )


def build_registry(cfg: RunConfig) -> FeatureRegistry:
    return FeatureRegistry().scan_directory(cfg.feat_dir)


def _label_table(images):
    table = np.full(max(img.id for img in images) + 1, -1, dtype=np.int64)
    for img in images:
        table[img.id] = img.label
    return table


def stage_train_ensemble(cfg: RunConfig) -> ensemble.EnsembleModel:
    ens_dir = os.path.join(cfg.feat_dir, "ensemble")
    if os.path.exists(os.path.join(ens_dir, "ensemble.manifest")):
        return ensemble.load_ensemble(ens_dir)
    registry = build_registry(cfg)
    provider = ensemble.StreamFeatureProvider(registry)
    streams = cfg.streams or default_streams(registry)
    labels = _label_table(_load_split(cfg, "train"))
    model = ensemble.train_ensemble(
        streams,
        provider,
        labels,
        C=cfg.c_grid[0] if len(set(cfg.c_grid)) == 1 else 1.0,
        c_grid=cfg.c_grid,
        epochs=cfg.svm_epochs,
        seed=cfg.seed,
        tie_break=cfg.tie_break,
    )
    ensemble.save_ensemble(model, ens_dir)
    return model


def default_streams(registry: FeatureRegistry):
    """Deep streams for every known registered tap, plus local features."""
    streams = []
    entries = registry.entries()
    if ("sift-fv", 0) in entries:
        streams.append(ensemble.parse_stream("sift-fv"))
    for model, layer in ensemble.DEFAULT_DEEP_MEMBERS:
        if (model, layer) in entries:
            streams.append(ensemble.parse_stream(f"deep:{model}:{layer}"))
    if not streams:
        raise EnsvisError("no feature streams available; run extraction first")
    return streams


def stage_evaluate(cfg: RunConfig, model=None) -> EvalReport:
    """Per-stream and ensemble accuracy on the test split."""
    if model is None:
        model = ensemble.load_ensemble(os.path.join(cfg.feat_dir, "ensemble"))
    registry = build_registry(cfg)
    provider = ensemble.StreamFeatureProvider(registry)
    test_images = _load_split(cfg, "test")
    labels = _label_table(test_images)
    features = {}
    ids_ref = None
    for member in model.members:
        ids, rows = provider.features(member.stream, "test")
        if ids_ref is None:
            ids_ref = ids
        elif not np.array_equal(ids, ids_ref):
            raise ConsistencyError("test feature files disagree on image ids")
        features[member.stream.name] = rows
    truth = labels[ids_ref]
    votes, scores = ensemble.member_votes(model, features)
    rows = []
    for m, member in enumerate(model.members):
        acc, _ = evaluate(votes[m], truth)
        rows.append((ensemble.display_name(member.stream), acc))
    deep_idx = [
        m for m, member in enumerate(model.members)
        if member.stream.source != ensemble.SIFT_FV
    ]
    has_sift = len(deep_idx) < len(model.members)
    ens_preds = _vote_batch(model, votes, scores, np.arange(len(model.members)))
    if has_sift and deep_idx:
        deep_preds = _vote_batch(model, votes, scores, deep_idx)
        acc, _ = evaluate(deep_preds, truth)
        rows.append(("Deep Ensemble", acc))
        acc, confusion = evaluate(ens_preds, truth)
        rows.append(("SIFT + Deep Ensemble", acc))
    else:
        acc, confusion = evaluate(ens_preds, truth)
        rows.append(("Deep Ensemble" if len(model.members) > 1 else "Ensemble", acc))
    return EvalReport(
        rows=rows,
        confusion=confusion,
        image_ids=ids_ref,
        truth=truth,
        member_names=model.stream_names,
        member_votes=votes,
        ensemble_preds=ens_preds,
        seed=cfg.seed,
    )


def _vote_batch(model, votes, scores, member_idx):
    idx = list(member_idx)
    return np.array(
        [
            ensemble.majority_vote(
                votes[idx, j], scores[idx, j, :], policy=model.tie_break,
                labels=model.labels,
            )
            for j in range(votes.shape[1])
        ],
        dtype=np.int64,
    )


def emit_report(rep: EvalReport, path) -> None:
    """Aligned text table at ``path`` plus CSV siblings.

    ``<base>.csv`` reparses to the same numbers; ``<base>_votes.csv``
    stores per-image member votes so the ensemble accuracy can be
    recomputed; timings go to a separate sidecar because they are the one
    non-deterministic output.
    """
    path = os.fspath(path)
    base = path[:-4] if path.endswith(".txt") else path
    name_w = max([len(n) for n, _ in rep.rows] + [len("Feature")])
    lines = [f"{'Feature':<{name_w}}  Accuracy (%)", "-" * (name_w + 14)]
    for name, acc in rep.rows:
        lines.append(f"{name:<{name_w}}  {acc:.1f}")
    with open(base + ".txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(base + ".csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "accuracy_pct", "seed"])
        for name, acc in rep.rows:
            writer.writerow([name, repr(float(acc)), rep.seed])
    with open(base + "_votes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "truth", *rep.member_names, "ensemble"])
        for j in range(rep.image_ids.shape[0]):
            writer.writerow(
                [
                    int(rep.image_ids[j]),
                    int(rep.truth[j]),
                    *(int(v) for v in rep.member_votes[:, j]),
                    int(rep.ensemble_preds[j]),
                ]
            )
    if rep.timings:
        with open(base + "_timings.txt", "w") as fh:
            for stage, seconds in rep.timings.items():
                fh.write(f"{stage}\t{seconds:.3f}\n")


def run_pipeline(cfg: RunConfig) -> EvalReport:
    """Execute every stage in order, attributing failures to their stage."""
    os.makedirs(cfg.feat_dir, exist_ok=True)
    timings = {}
    stages = [
        ("extract-sift", lambda: stage_extract_sift(cfg)),
        ("train-gmm", lambda: stage_train_gmm(cfg)),
        ("encode-fv", lambda: stage_encode_fv(cfg)),
        ("train-ensemble", lambda: stage_train_ensemble(cfg)),
        ("evaluate", lambda: stage_evaluate(cfg)),
    ]
    result = None
    for name, stage in stages:
        start = time.perf_counter()
        try:
            result = stage()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        timings[name] = time.perf_counter() - start
    result.timings = timings
    emit_report(result, os.path.join(cfg.feat_dir, "report.txt"))
    return result
