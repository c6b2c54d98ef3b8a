"""Optimizer, schedule, loop determinism, resume, and protocol plumbing."""

import numpy as np
import pytest

from unoranic_plus.data import load_checkpoint, save_checkpoint
from unoranic_plus.layers import ParamStore
from unoranic_plus.model import ModelConfig, ProbeClassifier, UnoranicPlusModel
from unoranic_plus.train import (
    DETECTION_CLASSES,
    OptimizerState,
    TrainConfig,
    adam_step,
    decayed_parameter_names,
    evaluate,
    lr_schedule,
    pretrain,
    train_probe,
    write_history,
)


def tiny_model(seed=0, depth=1):
    return UnoranicPlusModel(
        ModelConfig(image_h=8, image_w=8, channels=1, patch_size=4, embed_dim=16, depth=depth, heads=4),
        seed=seed,
    )


def tiny_images(n=24, seed=0):
    return np.random.default_rng(seed).random((n, 1, 8, 8))


# ----------------------------------------------------------------------
# adam
# ----------------------------------------------------------------------


def test_adam_first_step_closed_form():
    store = ParamStore()
    theta = store.register("w", np.array([1.0, 1.0]))
    theta.grad = np.ones(2)
    config = TrainConfig(betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    state = OptimizerState()
    adam_step(store, state, lr_t=0.01, config=config)
    # bias-corrected m-hat = v-hat = 1 at t=1, so the step is lr/(1+eps)
    expected = 1.0 - 0.01 * (1.0 / (1.0 + 1e-8))
    assert np.allclose(theta.data, expected, atol=1e-12)


def test_adam_zero_grad_no_change():
    store = ParamStore()
    theta = store.register("w", np.array([2.0, 3.0]))
    theta.grad = np.zeros(2)
    adam_step(store, OptimizerState(), 0.1, TrainConfig(weight_decay=0.0))
    assert np.array_equal(theta.data, [2.0, 3.0])


def test_adam_nan_grad_names_parameter():
    store = ParamStore()
    theta = store.register("encoder.embed.w", np.zeros(2))
    theta.grad = np.array([np.nan, 0.0])
    with pytest.raises(Exception, match="encoder.embed.w"):
        adam_step(store, OptimizerState(), 0.1, TrainConfig())


def test_decay_excludes_biases_and_norm_affines():
    model = tiny_model()
    decayed = decayed_parameter_names(model.params)
    for name in model.params:
        if name.endswith(".b") or name.endswith(".gamma") or name.endswith(".beta"):
            assert name not in decayed, name
        else:
            assert name in decayed, name


# ----------------------------------------------------------------------
# schedule
# ----------------------------------------------------------------------


def test_lr_schedule_endpoints():
    base = 1e-3
    assert lr_schedule(0, 100, 10, base) == 0.0
    assert lr_schedule(10, 100, 10, base) == base
    assert abs(lr_schedule(99, 100, 10, base) - base / 100) < 1e-12


def test_lr_schedule_no_warmup():
    assert lr_schedule(0, 50, 0, 1e-3) == 1e-3


# ----------------------------------------------------------------------
# pretraining loop
# ----------------------------------------------------------------------


def test_pretrain_determinism_50_steps():
    images = tiny_images(24, seed=1)
    config = TrainConfig(batch_size=8, base_lr=1e-3, seed=7, max_steps=50)
    states = []
    for _ in range(2):
        model = tiny_model(seed=3)
        pretrain(model, images, config)
        states.append({k: v.data.tobytes() for k, v in model.params.items()})
    assert states[0] == states[1]


def test_pretrain_zero_epochs_keeps_init():
    model = tiny_model(seed=4)
    before = {k: v.data.tobytes() for k, v in model.params.items()}
    config = TrainConfig(epochs=0, warmup_epochs=0, batch_size=8, seed=1)
    _, history = pretrain(model, tiny_images(), config)
    assert history == []
    assert {k: v.data.tobytes() for k, v in model.params.items()} == before


def test_pretrain_history_and_csv(tmp_path):
    model = tiny_model(seed=5)
    config = TrainConfig(batch_size=8, base_lr=1e-3, seed=2, max_steps=6)
    _, history = pretrain(model, tiny_images(), config)
    assert [row[0] for row in history] == list(range(6))
    path = tmp_path / "history.csv"
    write_history(path, history)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "step,lr,loss_total,loss_rs,loss_ri"
    assert len(lines) == 7
    parsed = [float(x) for x in lines[1].split(",")]
    assert parsed[2] == pytest.approx(parsed[3] + parsed[4], rel=1e-6)


def test_resume_matches_uninterrupted_run(tmp_path):
    images = tiny_images(16, seed=6)
    config = TrainConfig(epochs=4, warmup_epochs=1, batch_size=8, base_lr=1e-3, seed=9)

    straight = tiny_model(seed=11)
    pretrain(straight, images, config)

    # same schedule, interrupted after epoch 2
    resumed = tiny_model(seed=11)
    state, _ = pretrain(resumed, images, config, stop_epoch=2)

    path = tmp_path / "resume.uorp"
    tensors = resumed.state_dict()
    tensors.update({k: v.astype("<f4") for k, v in state.to_tensors().items()})
    save_checkpoint(path, dict(resumed.config.to_dict(), opt_step=str(state.t)), tensors)

    loaded_config, loaded = load_checkpoint(path)
    continued = tiny_model(seed=0)
    continued.load_state({k: v for k, v in loaded.items() if not k.startswith("opt.")})
    resumed_state = OptimizerState.from_tensors(loaded, t=int(loaded_config["opt_step"]))
    pretrain(continued, images, config, state=resumed_state, start_epoch=2)

    for name, tensor in straight.params.items():
        assert tensor.data.tobytes() == continued.params[name].data.tobytes(), name


# ----------------------------------------------------------------------
# probe training
# ----------------------------------------------------------------------


def test_probe_detect_label_distribution_uniform():
    from unoranic_plus import rng
    from unoranic_plus.corruption import sample_training_spec
    from unoranic_plus.train import detection_label

    counts = np.zeros(len(DETECTION_CLASSES))
    n = 8000
    for i in range(n):
        spec = sample_training_spec(int(rng.hash_words(3, 0xA5, 0, i)))
        counts[detection_label(spec)] += 1
    assert np.all(np.abs(counts / n - 1 / 8) < 0.03)


def test_probe_training_freezes_encoder_and_learns():
    model = tiny_model(seed=13)
    images, labels = _separable_set()
    probe = ProbeClassifier(model, num_classes=2, head_depth=1, seed=1)
    config = TrainConfig(batch_size=8, base_lr=1e-2, seed=3, max_steps=150)
    train_probe(probe, images, labels, "disease", config)
    logits = probe.predict_logits(images)
    assert (np.argmax(logits, axis=1) == labels).mean() > 0.8


def _separable_set(n=32):
    gen = np.random.default_rng(0)
    images = gen.random((n, 1, 8, 8)) * 0.2
    labels = (np.arange(n) % 2).astype(np.int64)
    images[labels == 1] += 0.6
    return np.clip(images, 0, 1), labels


# ----------------------------------------------------------------------
# evaluation protocols
# ----------------------------------------------------------------------


def test_reconstruction_report_rows():
    model = tiny_model(seed=17)
    images = tiny_images(5, seed=8)
    report = evaluate(model, images, np.zeros(5, dtype=int), "reconstruction")
    assert len(report.rows) == 5 * 4  # psnr/ssim x synthetic/anatomy
    groups = {(m, g) for m, g, _, _ in report.aggregates()}
    assert groups == {("psnr", "synthetic"), ("psnr", "anatomy"),
                      ("ssim", "synthetic"), ("ssim", "anatomy")}


def test_revision_report_rows():
    model = tiny_model(seed=18)
    images = tiny_images(3, seed=9)
    report = evaluate(model, images, np.zeros(3, dtype=int), "revision", seed=4)
    assert len(report.rows) == 7 * 3 * 3 * 3  # kinds x severities x images x metrics
    assert len(report.aggregates()) == 7 * 3 * 3


def test_robustness_report_rows():
    model = tiny_model(seed=19)
    images, labels = _separable_set(12)
    images = np.pad(images, ((0, 0), (0, 0), (0, 0), (0, 0)))  # keep 8x8
    probe = ProbeClassifier(model, num_classes=2, head_depth=1)
    report = evaluate(None, images, labels, "robustness", probe=probe, seed=5)
    assert len(report.aggregates()) == 2 * 3 * 2  # kinds x severities x (acc, auc)


def test_protocol_requires_checkpoints():
    from unoranic_plus.model import StateError

    with pytest.raises(StateError):
        evaluate(None, tiny_images(2), np.zeros(2, dtype=int), "reconstruction")
    with pytest.raises(StateError):
        evaluate(None, tiny_images(2), np.zeros(2, dtype=int), "classification")
