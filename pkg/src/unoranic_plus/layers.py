"""Vision-transformer building blocks assembled from tensor ops.

A model here is a flat registry of named parameter tensors plus pure
functions that consume them. Blocks are pre-norm residual transformer
blocks: ``x + MHSA(LN(x))`` followed by ``+ MLP(LN(.))`` with an MLP hidden
width of 4x and exact-erf GELU. Positional embeddings are a fixed 2-D
sine/cosine table (half the channels encode the patch-grid row, half the
column), so they never enter checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .tensor import Tensor, gelu, layernorm, softmax_lastdim

__all__ = [
    "ConfigError",
    "PatchGrid",
    "ParamStore",
    "patchify",
    "unpatchify",
    "positional_embedding",
    "init_linear",
    "init_block",
    "linear",
    "attention_block",
]

INIT_STD = 0.02
MLP_RATIO = 4


class ConfigError(ValueError):
    """Raised for architecture parameters that cannot be realized."""


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping square-patch partition of an image plane."""

    image_h: int
    image_w: int
    channels: int
    patch_size: int

    def __post_init__(self):
        p = self.patch_size
        if p < 1 or self.image_h % p or self.image_w % p:
            raise ConfigError(
                f"patch size {p} does not divide image {self.image_h}x{self.image_w}"
            )

    @property
    def grid_h(self) -> int:
        return self.image_h // self.patch_size

    @property
    def grid_w(self) -> int:
        return self.image_w // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


def patchify(images: Tensor, grid: PatchGrid) -> Tensor:
    """(N, C, H, W) -> (N, T, p*p*C) tokens.

    Token t at grid position (r, c) holds its patch in (row, col, channel)
    order. Built from reshape/transpose so it stays differentiable.
    """
    n = images.shape[0]
    if images.shape[1:] != (grid.channels, grid.image_h, grid.image_w):
        raise ConfigError(
            f"image batch {images.shape} does not match grid "
            f"({grid.channels}, {grid.image_h}, {grid.image_w})"
        )
    p = grid.patch_size
    x = images.reshape(n, grid.channels, grid.grid_h, p, grid.grid_w, p)
    x = x.transpose((0, 2, 4, 3, 5, 1))  # (N, gh, gw, pr, pc, C)
    return x.reshape(n, grid.tokens, grid.patch_dim)


def unpatchify(tokens: Tensor, grid: PatchGrid) -> Tensor:
    """Exact inverse of :func:`patchify`: (N, T, p*p*C) -> (N, C, H, W)."""
    n = tokens.shape[0]
    if tokens.shape[1:] != (grid.tokens, grid.patch_dim):
        raise ConfigError(
            f"token batch {tokens.shape} does not match grid "
            f"(T={grid.tokens}, patch_dim={grid.patch_dim})"
        )
    p = grid.patch_size
    x = tokens.reshape(n, grid.grid_h, grid.grid_w, p, p, grid.channels)
    x = x.transpose((0, 5, 1, 3, 2, 4))  # (N, C, gh, pr, gw, pc)
    return x.reshape(n, grid.channels, grid.image_h, grid.image_w)


def positional_embedding(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed 2-D sine/cosine positional table of shape (grid_h*grid_w, dim).

    The first dim/2 channels encode the row coordinate, the rest the column,
    each with the standard sin/cos frequency ladder. Deterministic, never
    trained.
    """
    if dim % 4:
        raise ConfigError(
            f"embedding dim {dim} must be a multiple of 4 "
            "(even split across two coordinates, each split across sin/cos)"
        )
    half = dim // 2
    quarter = half // 2
    omega = 1.0 / (10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter))

    def ladder(positions: np.ndarray) -> np.ndarray:
        angles = positions[:, None] * omega[None, :]
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    rows, cols = np.meshgrid(
        np.arange(grid_h, dtype=np.float64),
        np.arange(grid_w, dtype=np.float64),
        indexing="ij",
    )
    table = np.concatenate([ladder(rows.reshape(-1)), ladder(cols.reshape(-1))], axis=1)
    return table


class ParamStore(dict):
    """Registry mapping unique dotted names to trainable tensors."""

    def register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise ConfigError(f"parameter {name!r} registered twice")
        tensor = Tensor(value, requires_grad=True)
        self[name] = tensor
        return tensor

    def zero_grad(self) -> None:
        for tensor in self.values():
            tensor.grad = None


def init_linear(
    store: ParamStore, name: str, in_dim: int, out_dim: int, seed: int, std: float | None = None
) -> None:
    if std is None:
        std = INIT_STD
    store.register(
        f"{name}.w",
        rng.truncated_normal((in_dim, out_dim), std, seed, rng.string_hash(f"{name}.w")),
    )
    store.register(f"{name}.b", np.zeros(out_dim))


def init_block(store: ParamStore, prefix: str, dim: int, heads: int, seed: int) -> None:
    """Register one transformer block's parameters under `prefix`."""
    if dim % heads:
        raise ConfigError(f"dim {dim} not divisible by {heads} heads")
    store.register(f"{prefix}.ln1.gamma", np.ones(dim))
    store.register(f"{prefix}.ln1.beta", np.zeros(dim))
    init_linear(store, f"{prefix}.attn.qkv", dim, 3 * dim, seed)
    init_linear(store, f"{prefix}.attn.proj", dim, dim, seed)
    store.register(f"{prefix}.ln2.gamma", np.ones(dim))
    store.register(f"{prefix}.ln2.beta", np.zeros(dim))
    init_linear(store, f"{prefix}.mlp.fc1", dim, MLP_RATIO * dim, seed)
    init_linear(store, f"{prefix}.mlp.fc2", MLP_RATIO * dim, dim, seed)


def linear(x: Tensor, store: ParamStore, name: str) -> Tensor:
    return x @ store[f"{name}.w"] + store[f"{name}.b"]


def _self_attention(x: Tensor, store: ParamStore, prefix: str, heads: int) -> Tensor:
    n, t, d = x.shape
    head_dim = d // heads
    qkv = linear(x, store, f"{prefix}.attn.qkv")  # (N, T, 3d)
    qkv = qkv.reshape(n, t, 3, heads, head_dim).transpose((2, 0, 3, 1, 4))
    q, k, v = qkv.index0(0), qkv.index0(1), qkv.index0(2)  # (N, h, T, hd)
    scores = (q @ k.transpose((0, 1, 3, 2))).scale(1.0 / np.sqrt(head_dim))
    weights = softmax_lastdim(scores)
    mixed = weights @ v  # (N, h, T, hd)
    merged = mixed.transpose((0, 2, 1, 3)).reshape(n, t, d)
    return linear(merged, store, f"{prefix}.attn.proj")


def _mlp(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    hidden = gelu(linear(x, store, f"{prefix}.mlp.fc1"))
    return linear(hidden, store, f"{prefix}.mlp.fc2")


def attention_block(x: Tensor, store: ParamStore, prefix: str, heads: int) -> Tensor:
    """Pre-norm residual block: x + MHSA(LN1(x)), then + MLP(LN2(.))."""
    d = x.shape[-1]
    if d % heads:
        raise ConfigError(f"dim {d} not divisible by {heads} heads")
    normed = layernorm(x, store[f"{prefix}.ln1.gamma"], store[f"{prefix}.ln1.beta"])
    x = x + _self_attention(normed, store, prefix, heads)
    normed = layernorm(x, store[f"{prefix}.ln2.gamma"], store[f"{prefix}.ln2.beta"])
    return x + _mlp(normed, store, prefix)


def attention_weights(x: np.ndarray, store: ParamStore, prefix: str, heads: int) -> np.ndarray:
    """Post-softmax attention matrix for inspection/tests; no graph recorded."""
    from .tensor import no_grad

    with no_grad():
        normed = layernorm(
            Tensor(x), store[f"{prefix}.ln1.gamma"], store[f"{prefix}.ln1.beta"]
        )
        n, t, d = normed.shape
        head_dim = d // heads
        qkv = linear(normed, store, f"{prefix}.attn.qkv")
        qkv = qkv.reshape(n, t, 3, heads, head_dim).transpose((2, 0, 3, 1, 4))
        q, k = qkv.index0(0), qkv.index0(1)
        scores = (q @ k.transpose((0, 1, 3, 2))).scale(1.0 / np.sqrt(head_dim))
        return softmax_lastdim(scores).data
