"""The feature-orthogonalization autoencoder and its probe classifier.

One ViT encoder maps an image to per-patch latent tokens that carry both
anatomical content and acquisition characteristics. Two structurally
identical ViT decoders consume the same latent: the synthetic decoder
reproduces the (possibly distorted) input, the anatomy decoder is trained
toward the clean source image and thereby learns to discard distortions.
Encoder and decoders share depth, width, and head count (symmetric design).

Decoders re-add the fixed positional table to their projected input tokens;
a final layernorm after each block stack keeps pre-norm activations scaled.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .layers import (
    ConfigError,
    ParamStore,
    PatchGrid,
    attention_block,
    init_block,
    init_linear,
    linear,
    patchify,
    positional_embedding,
    unpatchify,
)
from .tensor import Tensor, layernorm, mse, no_grad

__all__ = ["ModelConfig", "UnoranicPlusModel", "ProbeClassifier", "StateError"]


class StateError(RuntimeError):
    """Operation requires state (e.g. a loaded checkpoint) that is absent."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by encoder and both decoders."""

    image_h: int = 28
    image_w: int = 28
    channels: int = 1
    patch_size: int = 4
    embed_dim: int = 128
    depth: int = 12
    heads: int = 16

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        PatchGrid(self.image_h, self.image_w, self.channels, self.patch_size)

    @classmethod
    def preset_small(cls, channels: int = 1, depth: int = 12) -> "ModelConfig":
        """28x28 inputs: 4x4 patches, 128-dim tokens, 12 blocks, 16 heads."""
        return cls(28, 28, channels, 4, 128, depth, 16)

    @classmethod
    def preset_large(cls, channels: int = 3, depth: int = 12) -> "ModelConfig":
        """224x224 inputs: 16x16 patches, 768-dim tokens, 12 blocks, 16 heads."""
        return cls(224, 224, channels, 16, 768, depth, 16)

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid(self.image_h, self.image_w, self.channels, self.patch_size)

    def to_dict(self) -> dict[str, str]:
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "ModelConfig":
        fields = (
            "image_h",
            "image_w",
            "channels",
            "patch_size",
            "embed_dim",
            "depth",
            "heads",
        )
        missing = [f for f in fields if f not in values]
        if missing:
            raise ConfigError(f"config blob missing keys {missing}")
        return cls(**{f: int(values[f]) for f in fields})


def _tokens_tensor(images) -> Tensor:
    if isinstance(images, Tensor):
        return images
    return Tensor(np.asarray(images))


class UnoranicPlusModel:
    """Single encoder, two parallel decoders over a shared latent."""

    ENCODER = "encoder"
    DECODER_SYNTH = "decoder_synth"
    DECODER_ANAT = "decoder_anat"

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParamStore()
        grid = config.grid
        d = config.embed_dim

        # transformer-internal projections use the 0.02 convention; the
        # image-facing linears (patch embed, decoder input, pixel head) are
        # fan-scaled, which reaches usable reconstructions far sooner
        def fan_std(fan_in: int, fan_out: int) -> float:
            return float(np.sqrt(2.0 / (fan_in + fan_out)))

        init_linear(
            self.params, f"{self.ENCODER}.embed", grid.patch_dim, d, seed,
            std=fan_std(grid.patch_dim, d),
        )
        for i in range(config.depth):
            init_block(self.params, f"{self.ENCODER}.block{i}", d, config.heads, seed)
        self.params.register(f"{self.ENCODER}.norm.gamma", np.ones(d))
        self.params.register(f"{self.ENCODER}.norm.beta", np.zeros(d))
        for decoder in (self.DECODER_SYNTH, self.DECODER_ANAT):
            init_linear(self.params, f"{decoder}.embed", d, d, seed, std=fan_std(d, d))
            for i in range(config.depth):
                init_block(self.params, f"{decoder}.block{i}", d, config.heads, seed)
            self.params.register(f"{decoder}.norm.gamma", np.ones(d))
            self.params.register(f"{decoder}.norm.beta", np.zeros(d))
            init_linear(
                self.params, f"{decoder}.head", d, grid.patch_dim, seed,
                std=fan_std(d, grid.patch_dim),
            )
        self._pos = positional_embedding(grid.grid_h, grid.grid_w, d)

    # ------------------------------------------------------------------
    # forward contracts
    # ------------------------------------------------------------------

    def _pos_tensor(self) -> Tensor:
        return Tensor(self._pos)

    def _run_blocks(self, x: Tensor, prefix: str) -> Tensor:
        for i in range(self.config.depth):
            x = attention_block(x, self.params, f"{prefix}.block{i}", self.config.heads)
        return layernorm(
            x, self.params[f"{prefix}.norm.gamma"], self.params[f"{prefix}.norm.beta"]
        )

    def encode(self, images) -> Tensor:
        """(N, C, H, W) images -> (N, T, embed_dim) latent tokens."""
        images = _tokens_tensor(images)
        expected = (self.config.channels, self.config.image_h, self.config.image_w)
        if images.shape[1:] != expected:
            raise ConfigError(f"image batch {images.shape} does not match config {expected}")
        tokens = patchify(images, self.config.grid)
        x = linear(tokens, self.params, f"{self.ENCODER}.embed") + self._pos_tensor()
        return self._run_blocks(x, self.ENCODER)

    def _decode(self, latents: Tensor, decoder: str) -> Tensor:
        x = linear(latents, self.params, f"{decoder}.embed") + self._pos_tensor()
        x = self._run_blocks(x, decoder)
        tokens = linear(x, self.params, f"{decoder}.head")
        return unpatchify(tokens, self.config.grid)

    def decode_synthetic(self, latents: Tensor) -> Tensor:
        """Latent -> reconstruction of the (distorted) input, unclamped."""
        return self._decode(latents, self.DECODER_SYNTH)

    def decode_anatomy(self, latents: Tensor) -> Tensor:
        """Latent -> distortion-free anatomical reconstruction, unclamped."""
        return self._decode(latents, self.DECODER_ANAT)

    def loss(self, clean, distorted) -> tuple[Tensor, Tensor, Tensor]:
        """Equal-weight sum of the two pixel-space MSE reconstruction losses.

        Returns (total, synthetic-reconstruction loss, anatomy loss). The
        synthetic branch regresses the distorted input; the anatomy branch
        regresses the clean source.
        """
        clean = _tokens_tensor(clean)
        distorted = _tokens_tensor(distorted)
        if clean.shape != distorted.shape:
            raise ConfigError(f"image shapes differ: {clean.shape} vs {distorted.shape}")
        latents = self.encode(distorted)
        loss_synth = mse(self.decode_synthetic(latents), distorted)
        loss_anat = mse(self.decode_anatomy(latents), clean)
        return loss_synth + loss_anat, loss_synth, loss_anat

    def reconstruct(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inference pair (synthetic, anatomy) clamped to [0, 1] for export."""
        with no_grad():
            latents = self.encode(images)
            synth = self.decode_synthetic(latents).data
            anat = self.decode_anatomy(latents).data
        return np.clip(synth, 0.0, 1.0), np.clip(anat, 0.0, 1.0)

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.astype("<f4") for name, tensor in self.params.items()}

    def load_state(self, tensors: dict[str, np.ndarray], allow_missing: bool = False) -> None:
        """Strict name-and-shape load; lists every offending entry at once."""
        problems = []
        for name in sorted(set(tensors) - set(self.params)):
            problems.append(f"unknown parameter {name!r}")
        for name in sorted(set(self.params) - set(tensors)):
            if not allow_missing:
                problems.append(f"missing parameter {name!r}")
        for name in sorted(set(tensors) & set(self.params)):
            want = self.params[name].shape
            got = tensors[name].shape
            if want != got:
                problems.append(f"shape mismatch for {name!r}: checkpoint {got}, model {want}")
        if problems:
            raise StateError("checkpoint does not match model:\n  " + "\n  ".join(problems))
        for name, array in tensors.items():
            self.params[name].data = np.ascontiguousarray(
                array, dtype=self.params[name].data.dtype
            )

    def decoder_parameter_pairs(self) -> list[tuple[str, tuple[int, ...], tuple[int, ...]]]:
        """Name-for-name shape listing for the two decoders (symmetry check)."""
        pairs = []
        for name, tensor in self.params.items():
            if name.startswith(self.DECODER_SYNTH):
                suffix = name[len(self.DECODER_SYNTH) :]
                twin = self.params[self.DECODER_ANAT + suffix]
                pairs.append((suffix, tensor.shape, twin.shape))
        return pairs


class ProbeClassifier:
    """Frozen-encoder classifier: a small ViT head over latent tokens.

    The head mirrors a decoder front (input projection + positional table +
    transformer blocks + final norm) followed by a token-mean pool and a
    linear layer to class logits. The encoder runs without graph recording,
    so its parameters cannot receive gradients; freezing is additionally
    asserted bitwise by the training loop.
    """

    HEAD = "head"

    def __init__(
        self,
        base: UnoranicPlusModel,
        num_classes: int,
        head_depth: int = 2,
        seed: int = 0,
    ):
        if num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {num_classes}")
        self.base = base
        self.num_classes = num_classes
        self.head_depth = head_depth
        self.params = ParamStore()
        d = base.config.embed_dim
        init_linear(self.params, f"{self.HEAD}.embed", d, d, seed)
        for i in range(head_depth):
            init_block(self.params, f"{self.HEAD}.block{i}", d, base.config.heads, seed)
        self.params.register(f"{self.HEAD}.norm.gamma", np.ones(d))
        self.params.register(f"{self.HEAD}.norm.beta", np.zeros(d))
        init_linear(self.params, f"{self.HEAD}.fc", d, num_classes, seed)

    def forward(self, images) -> Tensor:
        """(N, C, H, W) -> (N, num_classes) logits; softmax belongs to metrics."""
        with no_grad():
            latents = self.base.encode(images).data
        x = linear(Tensor(latents), self.params, f"{self.HEAD}.embed")
        x = x + Tensor(self.base._pos)
        for i in range(self.head_depth):
            x = attention_block(x, self.params, f"{self.HEAD}.block{i}", self.base.config.heads)
        x = layernorm(
            x, self.params[f"{self.HEAD}.norm.gamma"], self.params[f"{self.HEAD}.norm.beta"]
        )
        pooled = x.mean(axis=1)
        return linear(pooled, self.params, f"{self.HEAD}.fc")

    def predict_logits(self, images: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward(images).data.copy()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: t.data.astype("<f4") for name, t in self.base.params.items()
               if name.startswith(UnoranicPlusModel.ENCODER)}
        out.update({name: t.data.astype("<f4") for name, t in self.params.items()})
        return out
