"""Metric tests against independent scalar-loop reference implementations."""

import numpy as np
import pytest

from unoranic_plus.metrics import EvalReport, MetricError, accuracy, psnr, roc_auc, ssim

from oracles import accuracy_ref, binary_auc_ref, macro_auc_ref, psnr_ref, ssim_ref


def test_psnr_identical_capped():
    img = np.random.default_rng(0).random((1, 8, 8))
    assert psnr(img, img) == 100.0


def test_psnr_hand_value():
    a = np.zeros(4)
    b = np.full(4, 0.1)  # MSE = 0.01 -> 20 dB
    assert abs(psnr(a, b) - 20.0) < 1e-12


def test_psnr_matches_reference():
    gen = np.random.default_rng(1)
    for _ in range(50):
        a = gen.random((1, 9, 9))
        b = gen.random((1, 9, 9))
        assert abs(psnr(a, b) - psnr_ref(a, b)) < 1e-9


def test_psnr_symmetry():
    gen = np.random.default_rng(2)
    a, b = gen.random((8, 8)), gen.random((8, 8))
    assert abs(psnr(a, b) - psnr(b, a)) < 1e-9


def test_ssim_identical_is_one():
    img = np.random.default_rng(3).random((1, 12, 12))
    assert abs(ssim(img, img) - 1.0) < 1e-9


def test_ssim_constant_pair_is_one():
    img = np.full((1, 9, 9), 0.42)
    assert abs(ssim(img, img.copy()) - 1.0) < 1e-9


def test_ssim_inverted_image_structurally_disagrees():
    img = 0.25 + 0.5 * np.random.default_rng(4).random((1, 16, 16))
    value = ssim(img, 1.0 - img)
    assert value < 0.5
    assert abs(value - ssim_ref(img, 1.0 - img)) < 1e-9


def test_ssim_matches_reference():
    gen = np.random.default_rng(5)
    for _ in range(10):
        a = gen.random((2, 10, 10))
        b = np.clip(a + gen.normal(0, 0.2, a.shape), 0, 1)
        assert abs(ssim(a, b) - ssim_ref(a, b)) < 1e-9


def test_ssim_symmetry():
    gen = np.random.default_rng(6)
    a, b = gen.random((9, 9)), gen.random((9, 9))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9


def test_ssim_too_small_raises():
    with pytest.raises(MetricError):
        ssim(np.zeros((6, 6)), np.zeros((6, 6)))


def test_accuracy_all_correct():
    logits = np.eye(4)
    assert accuracy(logits, np.arange(4)) == 1.0


def test_accuracy_hand_count():
    logits = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.6, 0.4]])
    assert accuracy(logits, np.array([0, 1, 1, 0])) == 0.75


def test_accuracy_tie_breaks_low_index():
    logits = np.array([[0.5, 0.5]])
    assert accuracy(logits, np.array([0])) == 1.0
    assert accuracy(logits, np.array([1])) == 0.0


def test_accuracy_label_out_of_range():
    with pytest.raises(MetricError):
        accuracy(np.zeros((2, 3)), np.array([0, 3]))


def test_accuracy_matches_reference():
    gen = np.random.default_rng(7)
    for _ in range(30):
        logits = gen.normal(size=(20, 5))
        labels = gen.integers(0, 5, 20)
        assert accuracy(logits, labels) == accuracy_ref(logits, labels)


def test_auc_pair_counting_example():
    scores = np.array([0.1, 0.4, 0.35, 0.8])
    labels = np.array([0, 0, 1, 1])
    assert abs(roc_auc(scores, labels) - 0.75) < 1e-12


def test_auc_perfect_separation():
    assert roc_auc(np.array([0.0, 0.1, 0.9, 1.0]), np.array([0, 0, 1, 1])) == 1.0


def test_auc_all_ties():
    assert roc_auc(np.full(6, 0.5), np.array([0, 1, 0, 1, 0, 1])) == 0.5


def test_auc_matches_brute_force_with_ties():
    gen = np.random.default_rng(8)
    for _ in range(50):
        scores = gen.integers(0, 5, 30) / 4.0  # coarse grid forces ties
        labels = gen.integers(0, 2, 30)
        if labels.min() == labels.max():
            continue
        assert abs(roc_auc(scores, labels) - binary_auc_ref(scores, labels)) < 1e-9


def test_auc_invariant_under_monotone_transform():
    gen = np.random.default_rng(9)
    scores = gen.normal(size=40)
    labels = gen.integers(0, 2, 40)
    base = roc_auc(scores, labels)
    assert abs(roc_auc(np.exp(scores), labels) - base) < 1e-12
    assert abs(roc_auc(3.0 * scores + 7.0, labels) - base) < 1e-12


def test_auc_negation_complements_without_ties():
    gen = np.random.default_rng(10)
    scores = gen.permutation(30).astype(float)  # distinct scores
    labels = gen.integers(0, 2, 30)
    assert abs(roc_auc(scores, labels) + roc_auc(-scores, labels) - 1.0) < 1e-12


def test_auc_degenerate_labels_error():
    with pytest.raises(MetricError, match="undefined"):
        roc_auc(np.array([0.1, 0.2]), np.array([1, 1]))


def test_macro_auc_matches_reference():
    gen = np.random.default_rng(11)
    for _ in range(20):
        logits = gen.normal(size=(40, 4))
        labels = gen.integers(0, 4, 40)
        if len(set(labels.tolist())) < 4:
            continue
        got = roc_auc(logits, labels, mode="ovr_macro")
        assert abs(got - macro_auc_ref(logits, labels)) < 1e-9


def test_macro_auc_missing_class_error():
    with pytest.raises(MetricError, match="undefined"):
        roc_auc(np.zeros((4, 3)), np.array([0, 0, 1, 1]), mode="ovr_macro")


def test_report_aggregate_mean_invariant(tmp_path):
    report = EvalReport()
    gen = np.random.default_rng(12)
    values = gen.random(37)
    for i, v in enumerate(values):
        report.add_row(i, "psnr", v, "group_a")
    report.add_summary("auc", 0.9, group="clean", count=37)
    aggs = {(m, g): (v, c) for m, g, v, c in report.aggregates()}
    mean, count = aggs[("psnr", "group_a")]
    assert count == 37
    assert abs(mean - values.mean()) < 1e-9

    path = tmp_path / "report.csv"
    report.to_csv(path)
    text = path.read_bytes().decode("utf-8")
    assert "\r" not in text
    lines = text.strip().split("\n")
    assert lines[0] == "sample_id,metric,value,annotation"
    assert len(lines) == 1 + 37 + 2  # header + rows + psnr mean + auc summary
