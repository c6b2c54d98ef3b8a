"""ViT building-block tests: round-trips, table properties, block grad checks."""

import numpy as np
import pytest

from unoranic_plus.layers import (
    ConfigError,
    ParamStore,
    PatchGrid,
    attention_block,
    attention_weights,
    init_block,
    patchify,
    positional_embedding,
    unpatchify,
)
from unoranic_plus.tensor import Tensor, using_dtype

from oracles import assert_grads_close, finite_difference_grad


def make_block(dim=8, heads=2, seed=11):
    store = ParamStore()
    init_block(store, "blk", dim, heads, seed)
    return store


# ----------------------------------------------------------------------
# patchify / unpatchify
# ----------------------------------------------------------------------


def test_patchify_28x28_p4_shape():
    grid = PatchGrid(28, 28, 1, 4)
    tokens = patchify(Tensor(np.zeros((2, 1, 28, 28))), grid)
    assert tokens.shape == (2, 49, 16)


def test_patchify_224x224_p16_shape():
    grid = PatchGrid(224, 224, 3, 16)
    tokens = patchify(Tensor(np.zeros((1, 3, 224, 224))), grid)
    assert tokens.shape == (1, 196, 768)


def test_patchify_token_layout_row_col_channel():
    # 4x4 two-channel image, p=2: token 0 must hold (row, col, channel) order
    grid = PatchGrid(4, 4, 2, 2)
    img = np.arange(32, dtype=np.float64).reshape(1, 2, 4, 4)
    tokens = patchify(Tensor(img), grid).data
    expected0 = [
        img[0, :, 0, 0],
        img[0, :, 0, 1],
        img[0, :, 1, 0],
        img[0, :, 1, 1],
    ]
    assert np.array_equal(tokens[0, 0], np.concatenate(expected0))


def test_patchify_roundtrip_bitwise():
    grid = PatchGrid(28, 28, 3, 4)
    img = np.random.default_rng(0).random((5, 3, 28, 28))
    back = unpatchify(patchify(Tensor(img), grid), grid)
    assert np.array_equal(back.data, img.astype(back.data.dtype))


def test_unpatchify_zero_tokens():
    grid = PatchGrid(8, 8, 1, 4)
    out = unpatchify(Tensor(np.zeros((3, 4, 16))), grid)
    assert out.shape == (3, 1, 8, 8)
    assert not out.data.any()


def test_patchify_single_token_identity():
    grid = PatchGrid(4, 4, 1, 4)
    img = np.random.default_rng(1).random((2, 1, 4, 4))
    tokens = patchify(Tensor(img), grid)
    assert tokens.shape == (2, 1, 16)
    assert np.array_equal(tokens.data.reshape(2, 4, 4), img.reshape(2, 4, 4).astype(tokens.data.dtype))


def test_patchify_indivisible_raises():
    with pytest.raises(ConfigError):
        PatchGrid(28, 28, 1, 5)


def test_patchify_is_differentiable():
    grid = PatchGrid(4, 4, 1, 2)
    img = Tensor(np.random.default_rng(2).random((1, 1, 4, 4)), requires_grad=True)
    (patchify(img, grid) * 2.0).sum().backward()
    assert np.allclose(img.grad, 2.0)


# ----------------------------------------------------------------------
# positional embedding
# ----------------------------------------------------------------------


def test_positional_embedding_origin_row():
    table = positional_embedding(7, 7, 16)
    quarter = 4
    row0 = table[0]
    assert np.allclose(row0[:quarter], 0.0)  # sin(0) for row coordinate
    assert np.allclose(row0[quarter : 2 * quarter], 1.0)  # cos(0)
    assert np.allclose(row0[2 * quarter : 3 * quarter], 0.0)  # sin(0) for col
    assert np.allclose(row0[3 * quarter :], 1.0)


def test_positional_embedding_pure():
    assert np.array_equal(positional_embedding(7, 7, 32), positional_embedding(7, 7, 32))


def test_positional_embedding_rows_distinct_up_to_196_tokens():
    table = positional_embedding(14, 14, 64)
    for i in range(table.shape[0]):
        for j in range(i + 1, table.shape[0]):
            assert not np.allclose(table[i], table[j], atol=1e-9)


def test_positional_embedding_odd_dim_rejected():
    with pytest.raises(ConfigError):
        positional_embedding(7, 7, 13)


# ----------------------------------------------------------------------
# attention block
# ----------------------------------------------------------------------


def test_block_zero_projections_is_identity():
    store = make_block()
    for name, tensor in store.items():
        if name.endswith(".w"):
            tensor.data[...] = 0.0
    x = np.random.default_rng(3).normal(size=(2, 5, 8))
    out = attention_block(Tensor(x), store, "blk", heads=2)
    assert np.allclose(out.data, x, atol=1e-6)


@pytest.mark.parametrize("dim,heads,tokens", [(8, 2, 3), (16, 4, 7), (12, 3, 5)])
def test_block_shape_contract(dim, heads, tokens):
    store = ParamStore()
    init_block(store, "blk", dim, heads, seed=5)
    x = np.random.default_rng(4).normal(size=(2, tokens, dim))
    assert attention_block(Tensor(x), store, "blk", heads).shape == (2, tokens, dim)


def test_attention_rows_sum_to_one():
    store = make_block(dim=16, heads=4)
    x = np.random.default_rng(5).normal(size=(3, 6, 16))
    weights = attention_weights(x, store, "blk", heads=4)
    assert weights.shape == (3, 4, 6, 6)
    assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_block_token_permutation_equivariance():
    store = make_block(dim=8, heads=2, seed=7)
    x = np.random.default_rng(6).normal(size=(1, 6, 8))
    perm = np.array([3, 1, 5, 0, 2, 4])
    out = attention_block(Tensor(x), store, "blk", 2).data
    out_perm = attention_block(Tensor(x[:, perm]), store, "blk", 2).data
    assert np.allclose(out[:, perm], out_perm, atol=1e-10)


def test_block_finite_on_wide_inputs():
    store = make_block(dim=16, heads=4)
    x = np.random.default_rng(7).uniform(-10, 10, size=(2, 8, 16))
    out = attention_block(Tensor(x), store, "blk", 4)
    assert np.all(np.isfinite(out.data))


def test_block_grad_fd():
    with using_dtype(np.float64):
        store = make_block(dim=8, heads=2, seed=9)
        x = Tensor(np.random.default_rng(8).normal(size=(1, 2, 8)), requires_grad=True)
        cot = np.random.default_rng(9).normal(size=(1, 2, 8))

        def forward_scalar():
            return float((attention_block(x, store, "blk", 2).data * cot).sum())

        loss = (attention_block(x, store, "blk", 2) * Tensor(cot)).sum()
        loss.backward(leaves=list(store.values()))

        assert_grads_close(x.grad, finite_difference_grad(forward_scalar, x.data), 1e-3)
        for name, param in store.items():
            fd = finite_difference_grad(forward_scalar, param.data)
            assert_grads_close(param.grad, fd, 1e-3)


def test_duplicate_registration_rejected():
    store = ParamStore()
    store.register("p", np.zeros(2))
    with pytest.raises(ConfigError):
        store.register("p", np.zeros(2))
