"""Uncertainty-aware classification: a negative log-likelihood loss with a
learned per-sample variance, multi-view test-time-augmentation inference,
and particle-swarm tuning of the non-differentiable inference parameters."""

__version__ = "0.1.0"

from .data import Dataset, LabeledImage, NoiseSpec
from .harness import ExperimentConfig, run_experiment, sweep
from .losses import (
    ablation_loss,
    cross_entropy_loss,
    het_regression_loss,
    smooth_labels,
    uanll_loss,
    uanll_loss_sigma,
)
from .metrics import MetricsReport, accuracy, ece
from .multiview import AggregationMethod, MultiViewSet, ViewPrediction
from .ndmath import Prediction, TwoHeadMlp, init_model, load_model, save_model
from .pso import SwarmConfig, pso_minimize, tune_inference
from .trainer import TrainConfig, train_model

__all__ = [
    "AggregationMethod",
    "Dataset",
    "ExperimentConfig",
    "LabeledImage",
    "MetricsReport",
    "MultiViewSet",
    "NoiseSpec",
    "Prediction",
    "SwarmConfig",
    "TrainConfig",
    "TwoHeadMlp",
    "ViewPrediction",
    "ablation_loss",
    "accuracy",
    "cross_entropy_loss",
    "ece",
    "het_regression_loss",
    "init_model",
    "load_model",
    "pso_minimize",
    "run_experiment",
    "save_model",
    "smooth_labels",
    "sweep",
    "train_model",
    "tune_inference",
    "uanll_loss",
    "uanll_loss_sigma",
]
