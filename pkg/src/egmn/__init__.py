"""Exponential-Gaussian mixture network for watch-time prediction."""

__version__ = "0.1.0"

from .distribution import EgmParams, ParameterError, cdf, interval_prob, log_pdf, mean, pdf, quantile, rescale, sample
from .network import FeatureSchema, NetworkWeights, forward, backward, init_weights, load_checkpoint, save_checkpoint
from .objective import LossWeights, adagrad_step, combined_loss
from .data import (
    Dataset,
    FeatureRecord,
    Manifest,
    PreprocessConfig,
    SyntheticWorldConfig,
    Transform,
    generate_synthetic,
    load_csv,
    preprocess,
)
from .metrics import MetricReport, kl_divergence, mae, roc_auc, xauc
from .runner import MetricConfig, TrainConfig, evaluate, predict, train

__all__ = [
    "EgmParams", "ParameterError", "pdf", "log_pdf", "cdf", "mean", "quantile", "sample", "interval_prob",
    "rescale", "FeatureSchema", "NetworkWeights", "init_weights", "forward", "backward", "save_checkpoint",
    "load_checkpoint", "LossWeights", "combined_loss", "adagrad_step", "FeatureRecord", "Manifest",
    "PreprocessConfig", "Transform", "Dataset", "SyntheticWorldConfig", "generate_synthetic", "load_csv",
    "preprocess", "MetricReport", "mae", "xauc", "roc_auc", "kl_divergence", "TrainConfig", "MetricConfig",
    "train", "evaluate", "predict",
]
