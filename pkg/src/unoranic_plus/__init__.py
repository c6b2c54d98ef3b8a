"""Unsupervised orthogonalization of anatomy and image-characteristic
features via a symmetric ViT autoencoder: one encoder, two decoders, dual
pixel-space reconstruction losses, plus corruption, metric, and probe
tooling with a self-contained autodiff engine."""

from .corruption import CorruptionSpec
from .estimators import UnoranicPlusAutoencoder, UnoranicPlusProbe
from .metrics import EvalReport, accuracy, psnr, roc_auc, ssim
from .model import ModelConfig, ProbeClassifier, UnoranicPlusModel
from .tensor import Tensor
from .train import TrainConfig, evaluate, pretrain, train_probe

__version__ = "0.1.0"

__all__ = [
    "CorruptionSpec",
    "EvalReport",
    "ModelConfig",
    "ProbeClassifier",
    "Tensor",
    "TrainConfig",
    "UnoranicPlusAutoencoder",
    "UnoranicPlusModel",
    "UnoranicPlusProbe",
    "accuracy",
    "evaluate",
    "pretrain",
    "psnr",
    "roc_auc",
    "ssim",
    "train_probe",
    "__version__",
]
