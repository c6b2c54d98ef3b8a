"""scikit-learn style estimators wrapping the autoencoder and its probes.

``UnoranicPlusAutoencoder`` is fit/transform shaped: ``fit`` runs the
distort-and-reconstruct pretraining on an unlabeled image block, and
``transform`` returns the frozen latent tokens, flattened so the output
composes with downstream scikit-learn estimators. ``UnoranicPlusProbe`` is
a classifier over a fitted (frozen) autoencoder.

Both follow the scikit-learn contract: constructors only store their
arguments, fitted state lives in trailing-underscore attributes, and
``get_params``/``set_params`` come from ``BaseEstimator``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .metrics import psnr
from .model import ModelConfig, ProbeClassifier, UnoranicPlusModel
from .train import TrainConfig, evaluate, pretrain, train_probe
from .validation import check_image_batch, check_labels

__all__ = ["UnoranicPlusAutoencoder", "UnoranicPlusProbe"]


def _train_config(est, max_steps) -> TrainConfig:
    return TrainConfig(
        epochs=est.epochs,
        batch_size=est.batch_size,
        base_lr=est.base_lr,
        weight_decay=est.weight_decay,
        warmup_epochs=est.warmup_epochs,
        seed=est.seed,
        max_steps=max_steps,
    )


class UnoranicPlusAutoencoder(BaseEstimator, TransformerMixin):
    """Feature-orthogonalizing ViT autoencoder with a fit/transform surface.

    Parameters mirror the architecture (patch_size, embed_dim, depth, heads)
    and the optimizer; image geometry is taken from the data at fit time.
    """

    def __init__(
        self,
        patch_size: int = 4,
        embed_dim: int = 128,
        depth: int = 12,
        heads: int = 16,
        epochs: int = 150,
        batch_size: int = 64,
        base_lr: float = 1.5e-4,
        weight_decay: float = 0.05,
        warmup_epochs: int = 10,
        max_steps: int | None = None,
        seed: int = 0,
    ):
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.depth = depth
        self.heads = heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.max_steps = max_steps
        self.seed = seed

    def fit(self, X, y=None):
        X = check_image_batch(X)
        n, c, h, w = X.shape
        config = ModelConfig(
            image_h=h,
            image_w=w,
            channels=c,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
        )
        self.model_ = UnoranicPlusModel(config, seed=self.seed)
        self.optimizer_state_, self.history_ = pretrain(
            self.model_, X, _train_config(self, self.max_steps)
        )
        return self

    def _check_fitted(self) -> UnoranicPlusModel:
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError("UnoranicPlusAutoencoder is not fitted yet")
        return model

    def transform(self, X) -> np.ndarray:
        """Frozen latent tokens, flattened to (N, tokens * embed_dim)."""
        model = self._check_fitted()
        X = check_image_batch(X)
        latents = self.encode_tokens(X)
        return latents.reshape(X.shape[0], -1)

    def encode_tokens(self, X) -> np.ndarray:
        """Latent tokens with their grid structure, (N, tokens, embed_dim)."""
        from .tensor import no_grad

        model = self._check_fitted()
        X = check_image_batch(X)
        with no_grad():
            return model.encode(X).data.copy()

    def reconstruct(self, X) -> tuple[np.ndarray, np.ndarray]:
        """(synthetic, anatomy) reconstructions, clamped to [0, 1]."""
        model = self._check_fitted()
        return model.reconstruct(check_image_batch(X))

    def revise(self, X) -> np.ndarray:
        """Distortion-free reconstruction of possibly corrupted inputs."""
        return self.reconstruct(X)[1]

    def score(self, X, y=None) -> float:
        """Mean PSNR (dB) of the synthetic reconstruction on clean inputs."""
        X = check_image_batch(X)
        synthetic, _ = self.reconstruct(X)
        return float(np.mean([psnr(a, b) for a, b in zip(synthetic, X)]))


class UnoranicPlusProbe(BaseEstimator, ClassifierMixin):
    """Classifier head trained over a frozen fitted autoencoder.

    task="disease" trains on clean inputs with the given labels;
    task="detect" ignores ``y`` and trains the distortion-kind classifier
    (seven kinds plus clean) on internally corrupted inputs.
    """

    def __init__(
        self,
        autoencoder: UnoranicPlusAutoencoder | None = None,
        task: str = "disease",
        head_depth: int = 2,
        epochs: int = 30,
        batch_size: int = 64,
        base_lr: float = 1e-3,
        weight_decay: float = 0.0,
        warmup_epochs: int = 1,
        max_steps: int | None = None,
        seed: int = 0,
    ):
        self.autoencoder = autoencoder
        self.task = task
        self.head_depth = head_depth
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.max_steps = max_steps
        self.seed = seed

    def _base_model(self) -> UnoranicPlusModel:
        if isinstance(self.autoencoder, UnoranicPlusModel):
            return self.autoencoder
        if isinstance(self.autoencoder, UnoranicPlusAutoencoder):
            return self.autoencoder._check_fitted()
        raise ValueError("autoencoder must be a fitted UnoranicPlusAutoencoder or a model")

    def fit(self, X, y=None):
        from .train import DETECTION_CLASSES

        X = check_image_batch(X)
        base = self._base_model()
        if self.task == "detect":
            labels = np.zeros(X.shape[0], dtype=np.int64)  # unused by the loop
            num_classes = len(DETECTION_CLASSES)
        else:
            labels = check_labels(y, X.shape[0])
            num_classes = int(labels.max()) + 1
        self.probe_ = ProbeClassifier(base, num_classes, head_depth=self.head_depth, seed=self.seed)
        _, self.history_ = train_probe(
            self.probe_, X, labels, self.task, _train_config(self, self.max_steps)
        )
        self.classes_ = np.arange(num_classes)
        return self

    def _check_fitted(self) -> ProbeClassifier:
        probe = getattr(self, "probe_", None)
        if probe is None:
            raise NotFittedError("UnoranicPlusProbe is not fitted yet")
        return probe

    def decision_function(self, X) -> np.ndarray:
        return self._check_fitted().predict_logits(check_image_batch(X))

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exps = np.exp(shifted)
        return exps / exps.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)
