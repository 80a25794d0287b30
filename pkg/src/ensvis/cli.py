"""Command-line entry point.

Stages are individually invocable and cache to the feature directory;
``run`` chains them all. Options come from flags, from a ``--config``
key-value file (flags win), or from the ``ENSVIS_DATA_DIR`` /
``ENSVIS_FEAT_DIR`` environment variables. Exit code is 0 on success and
1 with the failing stage named on stderr otherwise.
"""

import argparse
import os
import sys

from . import ensemble, pipeline, svm
from .errors import EnsvisError, PipelineError
from .featstore import validate_registry
from .pca import fit_pca, project, save_pca
from .validation import l2_normalize_rows

#: Built-in defaults applied below flags and config-file entries.
DEFAULTS = {
    "seed": 0,
    "subset": 0,
    "streams": "",
    "gmm_size": 64,
    "upscale": 2,
    "c_grid": "0.01,0.1,1,10",
    "epochs": 1000,
    "tie_break": ensemble.TIE_MAX_CONFIDENCE_SUM,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ensvis",
        description="Ensemble image classification over local and deep features",
    )
    parser.add_argument(
        "--config", default=None,
        help="key-value config file (streams, tie_break, c_grid, ...); "
        "explicit flags take precedence",
    )
    parser.add_argument(
        "--data-dir", default=None,
        help="directory with the binary image batches",
    )
    parser.add_argument(
        "--feat-dir", default=None,
        help="directory for cached features, models, and reports",
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--subset", type=int, default=None,
        help="first N images per class per split (0 = full split)",
    )
    parser.add_argument(
        "--streams", default=None,
        help="comma-separated stream specs, e.g. "
        "'sift-fv,deep:vgg16:6,vgg567' (default: all registered)",
    )
    parser.add_argument("--gmm-size", type=int, default=None)
    parser.add_argument("--upscale", type=int, default=None, choices=(1, 2, 4))
    parser.add_argument(
        "--c-grid", default=None,
        help="candidate SVM C values, comma-separated",
    )
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument(
        "--tie-break", default=None, choices=ensemble.TIE_POLICIES,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("extract-sift", help="detect and describe local features")
    sub.add_parser("train-gmm", help="fit the descriptor vocabulary")
    sub.add_parser("encode-fv", help="encode per-image Fisher Vectors")
    p = sub.add_parser("fit-pca", help="fit a reducer for one stream")
    p.add_argument("stream", help="stream spec to reduce")
    p.add_argument("q", type=int, help="target dimension")
    p.add_argument("out", help="output model path")
    p = sub.add_parser("train-svm", help="train one stream's classifier")
    p.add_argument("stream", help="stream spec to train on")
    p.add_argument("out", help="output model path")
    sub.add_parser("train-ensemble", help="train classifiers for every stream")
    sub.add_parser("evaluate", help="score the trained ensemble on the test split")
    sub.add_parser("report", help="re-render report files from the trained ensemble")
    sub.add_parser("validate-registry", help="check registered feature files")
    sub.add_parser("run", help="execute the full pipeline")
    return parser


def _read_config_file(path):
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise EnsvisError(f"{path}:{lineno}: expected 'key = value'")
            entries[key.strip().replace("-", "_")] = value.strip()
    return entries


def _config(args) -> pipeline.RunConfig:
    fromfile = _read_config_file(args.config) if args.config else {}

    def pick(key, cast=str):
        flag = getattr(args, key)
        if flag is not None:
            return flag
        if key in fromfile:
            return cast(fromfile[key])
        return DEFAULTS.get(key)

    data_dir = pick("data_dir") or os.environ.get("ENSVIS_DATA_DIR")
    feat_dir = pick("feat_dir") or os.environ.get("ENSVIS_FEAT_DIR")
    if not data_dir:
        raise EnsvisError("--data-dir, config data_dir, or ENSVIS_DATA_DIR required")
    if not feat_dir:
        raise EnsvisError("--feat-dir, config feat_dir, or ENSVIS_FEAT_DIR required")
    tie_break = pick("tie_break")
    if tie_break not in ensemble.TIE_POLICIES:
        raise EnsvisError(f"unknown tie policy {tie_break!r}")
    streams = [
        ensemble.parse_stream(s) for s in pick("streams").split(",") if s.strip()
    ]
    return pipeline.RunConfig(
        data_dir=data_dir,
        feat_dir=feat_dir,
        streams=streams,
        gmm_size=pick("gmm_size", int),
        c_grid=tuple(float(c) for c in str(pick("c_grid")).split(",")),
        seed=pick("seed", int),
        subset=pick("subset", int),
        upscale=pick("upscale", int),
        svm_epochs=pick("epochs", int),
        tie_break=tie_break,
    )


def _stream_training_data(cfg, stream_spec):
    registry = pipeline.build_registry(cfg)
    provider = ensemble.StreamFeatureProvider(registry)
    stream = ensemble.parse_stream(stream_spec)
    ids, rows = provider.features(stream, "train")
    labels = pipeline._label_table(pipeline._load_split(cfg, "train"))
    return stream, rows, labels[ids]


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        command = args.command
        if command == "extract-sift":
            n = pipeline.stage_extract_sift(cfg)
            print(f"wrote {n} descriptor files")
        elif command == "train-gmm":
            pipeline.stage_extract_sift(cfg)
            params = pipeline.stage_train_gmm(cfg)
            print(f"vocabulary: {params.n_components} components, dim {params.n_features}")
        elif command == "encode-fv":
            pipeline.stage_encode_fv(cfg)
            print("encoded Fisher Vectors for both splits")
        elif command == "fit-pca":
            _, rows, _ = _stream_training_data(cfg, args.stream)
            save_pca(fit_pca(rows, args.q), args.out)
            print(f"fit {rows.shape[1]} -> {args.q} reducer at {args.out}")
        elif command == "train-svm":
            stream, rows, y = _stream_training_data(cfg, args.stream)
            if stream.pca_dim is not None:
                rows = project(fit_pca(rows, stream.pca_dim), rows)
            model = svm.train_ovr(
                l2_normalize_rows(rows), y,
                C=cfg.c_grid[0] if len(set(cfg.c_grid)) == 1 else svm.cross_validate_c(
                    l2_normalize_rows(rows), y, cfg.c_grid,
                    epochs=cfg.svm_epochs, seed=cfg.seed,
                ),
                epochs=cfg.svm_epochs, seed=cfg.seed,
            )
            svm.save_svm(model, args.out)
            print(f"trained {model.n_classes}-class model at {args.out}")
        elif command == "train-ensemble":
            model = pipeline.stage_train_ensemble(cfg)
            print(f"trained ensemble with members: {', '.join(model.stream_names)}")
        elif command in ("evaluate", "report", "run"):
            if command == "run":
                report = pipeline.run_pipeline(cfg)
            else:
                report = pipeline.stage_evaluate(cfg)
                pipeline.emit_report(
                    report, os.path.join(cfg.feat_dir, "report.txt")
                )
            with open(os.path.join(cfg.feat_dir, "report.txt")) as fh:
                print(fh.read(), end="")
        elif command == "validate-registry":
            report = validate_registry(pipeline.build_registry(cfg))
            for note in report.notes:
                print(f"note: {note}")
            for violation in report.violations:
                print(f"violation: {violation}", file=sys.stderr)
            return 0 if report.ok else 1
    except PipelineError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 1
    except (EnsvisError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
