"""Evaluation metrics and the CSV report container.

PSNR and SSIM are the reconstruction metrics; accuracy and ROC-AUC the
classification ones. All four are checked in the test suite against
independent scalar-loop references at 1e-9, so implementations here favor
exactness over speed: AUC uses the tie-aware rank statistic rather than
curve integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricError",
    "psnr",
    "ssim",
    "accuracy",
    "roc_auc",
    "EvalReport",
]

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


class MetricError(ValueError):
    """Shape mismatch, out-of-range labels, or an undefined metric."""


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10*log10(max_val^2 / MSE), capped at 100 dB for (near-)identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise MetricError("psnr: non-finite input")
    mean_sq = float(np.mean((a - b) ** 2))
    if mean_sq < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(max_val * max_val / mean_sq)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - size // 2
    one_d = np.exp(-0.5 * (offsets / sigma) ** 2)
    window = np.outer(one_d, one_d)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Windowed SSIM: 7x7 Gaussian window (sigma 1.5), dynamic range 1.0,
    valid-region positions only, averaged over windows and channels.

    Accepts (H, W) or (C, H, W).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise MetricError(f"ssim: expected (H, W) or (C, H, W), got {a.shape}")
    if a.shape[-2] < SSIM_WINDOW or a.shape[-1] < SSIM_WINDOW:
        raise MetricError(f"ssim: image {a.shape} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")

    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    view = np.lib.stride_tricks.sliding_window_view
    channel_values = []
    for c in range(a.shape[0]):
        pa = view(a[c], (SSIM_WINDOW, SSIM_WINDOW))
        pb = view(b[c], (SSIM_WINDOW, SSIM_WINDOW))
        mu_a = np.einsum("ijkl,kl->ij", pa, window)
        mu_b = np.einsum("ijkl,kl->ij", pb, window)
        var_a = np.einsum("ijkl,kl->ij", pa * pa, window) - mu_a**2
        var_b = np.einsum("ijkl,kl->ij", pb * pb, window) - mu_b**2
        cov = np.einsum("ijkl,kl->ij", pa * pb, window) - mu_a * mu_b
        num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
        den = (mu_a**2 + mu_b**2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
        channel_values.append(np.mean(num / den))
    return float(np.mean(channel_values))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Argmax match rate; ties resolve to the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise MetricError(f"accuracy: logits {logits.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise MetricError(f"accuracy: labels outside [0, {logits.shape[1]})")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Tie-aware rank statistic: P(score+ > score-) + 0.5 * P(tie)."""
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_auc undefined: need both classes present")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[positives].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc(scores: np.ndarray, labels: np.ndarray, mode: str = "binary") -> float:
    """Rank-based ROC-AUC.

    binary: `scores` is 1-D, labels in {0, 1}.
    ovr_macro: `scores` is (N, K) raw logits; softmax is applied and the
    unweighted mean of per-class one-vs-rest AUCs is returned. Every class
    must appear in `labels`, otherwise the metric is undefined and raises.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if mode == "binary":
        if scores.ndim != 1 or labels.shape != scores.shape:
            raise MetricError(f"roc_auc: scores {scores.shape} vs labels {labels.shape}")
        return _binary_auc(scores, labels.astype(int) == 1)
    if mode == "ovr_macro":
        if scores.ndim != 2 or labels.shape != (scores.shape[0],):
            raise MetricError(f"roc_auc: scores {scores.shape} vs labels {labels.shape}")
        k = scores.shape[1]
        present = set(int(v) for v in labels)
        if present != set(range(k)):
            raise MetricError(
                f"roc_auc undefined: classes {sorted(set(range(k)) - present)} absent"
            )
        shifted = scores - scores.max(axis=1, keepdims=True)
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        per_class = [_binary_auc(probs[:, c], labels == c) for c in range(k)]
        return float(np.mean(per_class))
    raise MetricError(f"roc_auc: unknown mode {mode!r}")


# ----------------------------------------------------------------------
# report container
# ----------------------------------------------------------------------


@dataclass
class EvalReport:
    """Per-sample metric rows plus (mean, count) aggregates per group.

    Two kinds of entries: per-sample rows (aggregated by annotation group at
    export time) and summary values for set-level metrics such as ACC/AUC
    that are not means of per-sample quantities.
    """

    rows: list[tuple[str, str, float, str]] = field(default_factory=list)
    summaries: list[tuple[str, str, float, int]] = field(default_factory=list)

    def add_row(self, sample_id, metric: str, value: float, annotation: str = "") -> None:
        self.rows.append((str(sample_id), metric, float(value), annotation))

    def add_summary(self, metric: str, value: float, group: str = "", count: int = 0) -> None:
        self.summaries.append((metric, group, float(value), int(count)))

    def aggregates(self) -> list[tuple[str, str, float, int]]:
        """(metric, group, mean, count), rows grouped by (metric, annotation)."""
        grouped: dict[tuple[str, str], list[float]] = {}
        for _, metric, value, annotation in self.rows:
            grouped.setdefault((metric, annotation), []).append(value)
        out = [
            (metric, group, float(np.mean(values)), len(values))
            for (metric, group), values in sorted(grouped.items())
        ]
        out.extend((m, g, v, c) for m, g, v, c in self.summaries)
        return out

    def to_csv(self, path) -> None:
        """UTF-8, LF endings, 6-decimal values; aggregate rows carry
        sample_id 'mean' and their group key in the annotation column."""
        lines = ["sample_id,metric,value,annotation"]
        for sample_id, metric, value, annotation in self.rows:
            lines.append(f"{sample_id},{metric},{value:.6f},{annotation}")
        for metric, group, mean, _count in self.aggregates():
            lines.append(f"mean,{metric},{mean:.6f},{group}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
