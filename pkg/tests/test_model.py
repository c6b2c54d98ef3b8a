"""Model contracts: shapes, purity, gradient separation, freeze, symmetry."""

import numpy as np
import pytest

from unoranic_plus.layers import ConfigError
from unoranic_plus.model import ModelConfig, ProbeClassifier, StateError, UnoranicPlusModel


def tiny_model(seed=0):
    return UnoranicPlusModel(
        ModelConfig(image_h=8, image_w=8, channels=1, patch_size=4, embed_dim=16, depth=2, heads=4),
        seed=seed,
    )


def tiny_images(n=3, seed=0):
    return np.random.default_rng(seed).random((n, 1, 8, 8))


def test_encode_shape_preset_small():
    model = UnoranicPlusModel(ModelConfig.preset_small(depth=1), seed=1)
    latents = model.encode(np.zeros((2, 1, 28, 28)))
    assert latents.shape == (2, 49, 128)


def test_encode_purity():
    model = tiny_model()
    imgs = tiny_images()
    assert np.array_equal(model.encode(imgs).data, model.encode(imgs).data)


def test_decode_shape_roundtrip_and_finite():
    model = tiny_model()
    latents = model.encode(tiny_images(4))
    synth = model.decode_synthetic(latents)
    anat = model.decode_anatomy(latents)
    assert synth.shape == anat.shape == (4, 1, 8, 8)
    assert np.all(np.isfinite(synth.data)) and np.all(np.isfinite(anat.data))


def test_encode_dim_mismatch():
    model = tiny_model()
    with pytest.raises(ConfigError):
        model.encode(np.zeros((1, 1, 28, 28)))


def test_loss_nonnegative_identity_corruption():
    model = tiny_model()
    imgs = tiny_images(2)
    total, loss_synth, loss_anat = model.loss(imgs, imgs.copy())
    assert total.item() >= 0.0
    assert abs(total.item() - (loss_synth.item() + loss_anat.item())) < 1e-6


def test_decoder_parameter_symmetry():
    model = tiny_model()
    pairs = model.decoder_parameter_pairs()
    assert pairs, "no decoder parameters found"
    for suffix, shape_synth, shape_anat in pairs:
        assert shape_synth == shape_anat, suffix
    synth_names = {n for n in model.params if n.startswith(model.DECODER_SYNTH)}
    anat_names = {n for n in model.params if n.startswith(model.DECODER_ANAT)}
    assert len(synth_names) == len(anat_names) == len(pairs)


def test_gradient_separation():
    model = tiny_model(seed=3)
    imgs = tiny_images(2, seed=4)
    distorted = np.clip(imgs + 0.1, 0, 1)
    leaves = list(model.params.values())

    model.params.zero_grad()
    _, loss_synth, _ = model.loss(imgs, distorted)
    loss_synth.backward(leaves=leaves)
    for name, param in model.params.items():
        if name.startswith(model.DECODER_ANAT):
            assert not param.grad.any(), f"synthetic loss leaked into {name}"
    assert any(
        param.grad.any() for name, param in model.params.items() if name.startswith(model.ENCODER)
    )
    assert any(
        param.grad.any()
        for name, param in model.params.items()
        if name.startswith(model.DECODER_SYNTH)
    )

    model.params.zero_grad()
    _, _, loss_anat = model.loss(imgs, distorted)
    loss_anat.backward(leaves=leaves)
    for name, param in model.params.items():
        if name.startswith(model.DECODER_SYNTH):
            assert not param.grad.any(), f"anatomy loss leaked into {name}"
    assert any(
        param.grad.any() for name, param in model.params.items() if name.startswith(model.ENCODER)
    )


def test_probe_logit_shape_and_softmax_free():
    model = tiny_model()
    probe = ProbeClassifier(model, num_classes=8, head_depth=1)
    logits = probe.predict_logits(tiny_images(5))
    assert logits.shape == (5, 8)
    assert not np.allclose(logits.sum(axis=1), 1.0)  # raw logits, not probabilities


def test_probe_frozen_encoder_gets_no_gradient():
    from unoranic_plus.tensor import cross_entropy

    model = tiny_model(seed=5)
    before = {name: t.data.tobytes() for name, t in model.params.items()}
    probe = ProbeClassifier(model, num_classes=2, head_depth=1)
    logits = probe.forward(tiny_images(4, seed=6))
    loss = cross_entropy(logits, np.array([0, 1, 0, 1]))
    loss.backward(leaves=list(probe.params.values()))
    for name, param in model.params.items():
        assert param.grad is None, f"encoder/decoder {name} received gradient"
    for name, param in model.params.items():
        assert param.data.tobytes() == before[name], f"{name} changed"
    assert any(param.grad.any() for param in probe.params.values())


def test_load_state_reports_every_problem():
    model = tiny_model()
    state = model.state_dict()
    # corrupt the state: drop one, rename one, reshape one
    state.pop("encoder.embed.b")
    state["not.a.param"] = np.zeros(3, dtype="<f4")
    state["encoder.norm.gamma"] = np.zeros((2, 2), dtype="<f4")
    with pytest.raises(StateError) as err:
        model.load_state(state)
    message = str(err.value)
    assert "missing parameter 'encoder.embed.b'" in message
    assert "unknown parameter 'not.a.param'" in message
    assert "shape mismatch for 'encoder.norm.gamma'" in message


def test_load_state_allow_missing_for_probe_checkpoints():
    model = tiny_model(seed=7)
    encoder_only = {
        name: array
        for name, array in model.state_dict().items()
        if name.startswith(model.ENCODER)
    }
    fresh = tiny_model(seed=8)
    fresh.load_state(encoder_only, allow_missing=True)
    assert np.array_equal(
        fresh.params["encoder.embed.w"].data, model.params["encoder.embed.w"].data
    )
