"""Secondary acceptance: exported activations drive the ensemble trends.

Runs the activation exporter over a 1,000-image/split synthetic corpus,
feeds the files to the pipeline, and checks the ensemble relationships on
the test split. Skips when the exporter package has not been built.
"""

import pathlib
import shutil
import subprocess
import time

import pytest

from conftest import make_ten_class_corpus
from ensvis.ensemble import parse_stream
from ensvis.featstore import validate_registry
from ensvis.pipeline import RunConfig, build_registry, run_pipeline

EXPORTER = pathlib.Path(__file__).resolve().parent.parent / "exporter"
CLI = EXPORTER / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not CLI.exists(),
    reason="activation exporter not built (run `npm install && npm run build` in exporter/)",
)

STREAMS = (
    "sift-fv",
    "deep:vgg16:5",
    "deep:vgg16:6",
    "deep:vgg16:7",
    "deep:alexnet:4",
    "deep:alexnet:6",
    "deep:alexnet:7",
)


def _export(model, layers, corpus, feat):
    result = subprocess.run(
        [
            "node", str(CLI), "--model", model, "--layers", layers,
            "--data-dir", str(corpus), "--out-dir", str(feat),
            "--split", "both", "--batch-size", "100", "--seed", "17",
        ],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, result.stderr


def test_exported_feature_trends(tmp_path):
    start = time.perf_counter()
    corpus = make_ten_class_corpus(
        tmp_path / "corpus", per_class_train=100, per_class_test=100
    )
    feat = tmp_path / "feat"
    _export("vgg16", "5,6,7", corpus, feat)
    _export("alexnet", "4,6,7", corpus, feat)

    cfg = RunConfig(
        data_dir=str(corpus),
        feat_dir=str(feat),
        streams=[parse_stream(s) for s in STREAMS],
        gmm_size=64,
        c_grid=(1.0,),
        seed=0,
        svm_epochs=300,
    )
    rep = run_pipeline(cfg)
    report = validate_registry(build_registry(cfg))
    assert report.ok, report.violations

    acc = dict(rep.rows)
    members = [n for n in acc if n not in ("Deep Ensemble", "SIFT + Deep Ensemble")]
    best_member = max(acc[n] for n in members)
    for name in sorted(acc):
        print(f"  {name}: {acc[name]:.1f}")

    # (a) voting must not fall more than 2 points below the best member
    assert acc["SIFT + Deep Ensemble"] >= best_member - 2.0
    # (b) adding the local-feature member must not cost more than 0.5
    assert acc["SIFT + Deep Ensemble"] >= acc["Deep Ensemble"] - 0.5
    # (c) the penultimate fully connected tap beats the final one
    assert acc["VGGNet (6)"] > acc["VGGNet (7)"]

    elapsed = time.perf_counter() - start
    assert elapsed < 1800, f"{elapsed:.0f}s exceeded the 30 min budget"
    print(f"ACCEPTANCE secondary-trends: PASS ({elapsed:.0f}s)")
