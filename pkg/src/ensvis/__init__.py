"""Ensemble image classification over local and deep features.

Independent maximum-margin classifiers are trained per feature stream
(Fisher-Vector-encoded local descriptors and ingested deep-network
activations) and combined by hard majority voting.
"""

from .codebook import DiagonalGmm, GmmParams, em_fit, init_kmeans, log_likelihood, responsibilities
from .dataset import GrayImage, Image, load_cifar10, preprocess
from .ensemble import (
    EnsembleModel,
    FeatureStream,
    majority_vote,
    parse_stream,
    predict_ensemble,
    train_ensemble,
)
from .featstore import FeatureFile, FeatureRegistry, read_features, validate_registry, write_features
from .fisher import FisherVector, FisherVectorEncoder, encode_fv, normalize_fv
from .pca import PcaModel, PrincipalComponents, fit_pca, project
from .pipeline import EvalReport, RunConfig, evaluate, run_pipeline
from .sift import DescriptorSet, Keypoint, ScaleSpace, SiftExtractor, build_scale_space, compute_descriptors, detect_keypoints, extract_sift
from .svm import LinearModel, MaxMarginClassifier, MulticlassModel, decision_values, predict, train_binary, train_ovr

__version__ = "0.1.0"

__all__ = [
    "DiagonalGmm", "GmmParams", "em_fit", "init_kmeans", "log_likelihood",
    "responsibilities", "GrayImage", "Image", "load_cifar10", "preprocess",
    "EnsembleModel", "FeatureStream", "majority_vote", "parse_stream",
    "predict_ensemble", "train_ensemble", "FeatureFile", "FeatureRegistry",
    "read_features", "validate_registry", "write_features", "FisherVector",
    "FisherVectorEncoder", "encode_fv", "normalize_fv", "PcaModel",
    "PrincipalComponents", "fit_pca", "project", "EvalReport", "RunConfig",
    "evaluate", "run_pipeline", "DescriptorSet", "Keypoint", "ScaleSpace",
    "SiftExtractor", "build_scale_space", "compute_descriptors",
    "detect_keypoints", "extract_sift", "LinearModel", "MaxMarginClassifier",
    "MulticlassModel", "decision_values", "predict", "train_binary",
    "train_ovr",
]
