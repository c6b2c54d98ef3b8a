"""Optimization loop, probe training, and the evaluation protocols.

Training is Adam with decoupled weight decay (biases and layernorm affines
excluded), linear warmup into cosine decay, and a fresh distortion spec per
image per epoch. Every random choice is keyed by (seed, epoch, image index)
through the counter generator, so a run resumed from a checkpoint at epoch k
reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .corruption import (
    HELD_OUT_KINDS,
    IDENTITY_KIND,
    SEVERITIES,
    TRAINING_KINDS,
    CorruptionSpec,
    apply,
    sample_training_spec,
)
from .metrics import EvalReport, accuracy, psnr, roc_auc, ssim
from .model import ProbeClassifier, StateError, UnoranicPlusModel
from .tensor import NonFiniteError, cross_entropy, no_grad

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "lr_schedule",
    "adam_step",
    "decayed_parameter_names",
    "pretrain",
    "train_probe",
    "evaluate",
    "detection_label",
    "DETECTION_CLASSES",
    "write_history",
]

# corruption-detection label space: the seven training kinds, then "clean"
DETECTION_CLASSES = TRAINING_KINDS + (IDENTITY_KIND,)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 64
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    warmup_epochs: int = 10
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    max_steps: int | None = None  # overrides epochs when set (smoke runs)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps is None and self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")

    def scaled_lr(self) -> float:
        """Linear batch-size scaling against the reference batch of 64."""
        return self.base_lr * self.batch_size / 64.0


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"opt.m.{k}": v for k, v in self.m.items()}
        out.update({f"opt.v.{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], t: int) -> "OptimizerState":
        state = cls(t=t)
        for name, array in tensors.items():
            if name.startswith("opt.m."):
                state.m[name[6:]] = array.copy()
            elif name.startswith("opt.v."):
                state.v[name[6:]] = array.copy()
        return state


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup 0 -> base_lr, then cosine decay to base_lr/100.

    Warmup reaches base_lr exactly at step == warmup_steps; the final step
    (total_steps - 1) lands on base_lr/100 exactly.
    """
    floor = base_lr / 100.0
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = total_steps - 1 - warmup_steps
    if span <= 0:
        return base_lr
    progress = (step - warmup_steps) / span
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * progress))


def decayed_parameter_names(params) -> set[str]:
    """Weight matrices only: biases and layernorm affines are never decayed."""
    return {
        name
        for name in params
        if not (name.endswith(".b") or name.endswith(".gamma") or name.endswith(".beta"))
    }


def adam_step(params, state: OptimizerState, lr_t: float, config: TrainConfig) -> None:
    """Bias-corrected Adam update with decoupled (additive) weight decay."""
    beta1, beta2 = config.betas
    state.t += 1
    bias1 = 1.0 - beta1**state.t
    bias2 = 1.0 - beta2**state.t
    decayed = decayed_parameter_names(params)
    for name, param in params.items():
        grad = param.grad
        if grad is None:
            grad = np.zeros_like(param.data)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        update = (m / bias1) / (np.sqrt(v / bias2) + config.eps)
        if config.weight_decay and name in decayed:
            update = update + config.weight_decay * param.data
        param.data = param.data - lr_t * update


# ----------------------------------------------------------------------
# pretraining
# ----------------------------------------------------------------------


def _plan_steps(n_images: int, config: TrainConfig) -> tuple[int, int, int]:
    per_epoch = math.ceil(n_images / config.batch_size)
    if config.max_steps is not None:
        total = config.max_steps
        epochs = math.ceil(total / per_epoch) if per_epoch else 0
    else:
        total = config.epochs * per_epoch
        epochs = config.epochs
    warmup = config.warmup_epochs * per_epoch
    if config.max_steps is not None:
        warmup = min(warmup, max(total // 10, 0))
    return total, warmup, epochs


def _corrupt_batch(
    images: np.ndarray, indices: np.ndarray, seed: int, epoch: int
) -> tuple[np.ndarray, list[CorruptionSpec]]:
    batch = images[indices]
    distorted = np.empty_like(batch)
    specs = []
    for row, dataset_index in enumerate(indices):
        spec_seed = int(rng.hash_words(seed, 0xA5, epoch, int(dataset_index)))
        spec = sample_training_spec(spec_seed)
        distorted[row] = apply(batch[row : row + 1], spec)[0]
        specs.append(spec)
    return distorted, specs


def pretrain(
    model: UnoranicPlusModel,
    images: np.ndarray,
    config: TrainConfig,
    state: OptimizerState | None = None,
    start_epoch: int = 0,
    stop_epoch: int | None = None,
) -> tuple[OptimizerState, list[tuple[int, float, float, float, float]]]:
    """Distort-and-reconstruct pretraining over an in-memory image block.

    Per step: each image gets a fresh seeded distortion spec, the dual
    reconstruction loss is backpropagated, and one Adam step is applied.
    ``start_epoch``/``stop_epoch`` resume or interrupt a run without
    changing its schedule, so stop-at-k then resume-at-k reproduces the
    uninterrupted run bitwise. Returns (optimizer state, history rows
    (step, lr, total, synth, anat)).
    """
    n = images.shape[0]
    total_steps, warmup_steps, epochs = _plan_steps(n, config)
    state = state or OptimizerState()
    history: list[tuple[int, float, float, float, float]] = []
    leaves = list(model.params.values())
    step = state.t
    lr = config.scaled_lr()
    for epoch in range(start_epoch, epochs if stop_epoch is None else min(stop_epoch, epochs)):
        order = rng.permutation(n, config.seed, 0x0E, epoch)
        for lo in range(0, n, config.batch_size):
            if step >= total_steps:
                return state, history
            indices = order[lo : lo + config.batch_size]
            clean = images[indices]
            distorted, _ = _corrupt_batch(images, indices, config.seed, epoch)
            model.params.zero_grad()
            try:
                total, loss_synth, loss_anat = model.loss(clean, distorted)
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite loss at step {step}: {exc}") from None
            lr_t = lr_schedule(step, total_steps, warmup_steps, lr)
            total.backward(leaves=leaves)
            adam_step(model.params, state, lr_t, config)
            history.append((step, lr_t, total.item(), loss_synth.item(), loss_anat.item()))
            step += 1
    return state, history


def write_history(path, history) -> None:
    lines = ["step,lr,loss_total,loss_rs,loss_ri"]
    for step, lr_t, total, loss_synth, loss_anat in history:
        lines.append(f"{step},{lr_t:.10g},{total:.10g},{loss_synth:.10g},{loss_anat:.10g}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# probe training
# ----------------------------------------------------------------------


def detection_label(spec: CorruptionSpec) -> int:
    if spec.is_identity:
        return len(TRAINING_KINDS)
    return TRAINING_KINDS.index(spec.kind)


def train_probe(
    probe: ProbeClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    task: str,
    config: TrainConfig,
) -> tuple[OptimizerState, list[tuple[int, float, float]]]:
    """Cross-entropy training of the head; the encoder stays frozen.

    disease: clean inputs, dataset labels.
    detect:  each image gets a uniformly sampled distortion (or none) per
             epoch; the label is the distortion kind, clean being its own
             class. Inputs are the distorted images.
    """
    if task not in ("disease", "detect"):
        raise ValueError(f"unknown probe task {task!r}")
    encoder_bytes = {
        name: t.data.tobytes()
        for name, t in probe.base.params.items()
        if name.startswith(UnoranicPlusModel.ENCODER)
    }
    n = images.shape[0]
    total_steps, warmup_steps, epochs = _plan_steps(n, config)
    state = OptimizerState()
    history: list[tuple[int, float, float]] = []
    leaves = list(probe.params.values())
    step = 0
    lr = config.scaled_lr()
    for epoch in range(epochs):
        order = rng.permutation(n, config.seed, 0x0F, epoch)
        for lo in range(0, n, config.batch_size):
            if step >= total_steps:
                break
            indices = order[lo : lo + config.batch_size]
            if task == "disease":
                batch = images[indices]
                batch_labels = labels[indices]
            else:
                batch, specs = _corrupt_batch(images, indices, config.seed, epoch)
                batch_labels = np.array([detection_label(s) for s in specs])
            probe.params.zero_grad()
            logits = probe.forward(batch)
            loss = cross_entropy(logits, batch_labels)
            lr_t = lr_schedule(step, total_steps, warmup_steps, lr)
            loss.backward(leaves=leaves)
            adam_step(probe.params, state, lr_t, config)
            history.append((step, lr_t, loss.item()))
            step += 1
        if step >= total_steps:
            break
    for name, raw in encoder_bytes.items():
        if probe.base.params[name].data.tobytes() != raw:
            raise StateError(f"frozen encoder parameter {name!r} changed during probe training")
    return state, history


# ----------------------------------------------------------------------
# evaluation protocols
# ----------------------------------------------------------------------


def _batched(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield lo, min(lo + batch_size, n)


def _per_image_specs(kind: str, severity: int, n: int, seed: int) -> list[CorruptionSpec]:
    return [
        CorruptionSpec(
            kind, severity, int(rng.hash_words(seed, rng.string_hash(kind), severity, i))
        )
        for i in range(n)
    ]


def _corrupt_with_specs(images: np.ndarray, specs) -> np.ndarray:
    out = np.empty_like(images)
    for i, spec in enumerate(specs):
        out[i] = apply(images[i : i + 1], spec)[0]
    return out


def _probe_logits(probe: ProbeClassifier, images: np.ndarray, batch_size: int) -> np.ndarray:
    chunks = [
        probe.predict_logits(images[lo:hi]) for lo, hi in _batched(images.shape[0], batch_size)
    ]
    return np.concatenate(chunks)


def _classification_summaries(
    report: EvalReport, logits: np.ndarray, labels: np.ndarray, group: str
) -> None:
    n, k = logits.shape
    report.add_summary("acc", accuracy(logits, labels), group=group, count=n)
    if k == 2:
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        auc = roc_auc(probs[:, 1], labels)
    else:
        auc = roc_auc(logits, labels, mode="ovr_macro")
    report.add_summary("auc", auc, group=group, count=n)


def evaluate(
    model: UnoranicPlusModel | None,
    images: np.ndarray,
    labels: np.ndarray,
    protocol: str,
    probe: ProbeClassifier | None = None,
    seed: int = 0,
    batch_size: int = 64,
) -> EvalReport:
    """Run one evaluation protocol over a test split and return its report.

    reconstruction: PSNR/SSIM of both reconstructions against clean inputs.
    revision:       per training kind and severity, PSNR of the distorted
                    input and of the anatomy reconstruction against clean,
                    plus PSNR of the synthetic reconstruction vs its target.
    classification: probe ACC/AUC on clean inputs.
    robustness:     probe ACC/AUC per held-out (kind, severity).
    """
    report = EvalReport()
    n = images.shape[0]
    if protocol == "reconstruction":
        if model is None:
            raise StateError("reconstruction protocol needs a model checkpoint")
        for lo, hi in _batched(n, batch_size):
            synth, anat = model.reconstruct(images[lo:hi])
            for i in range(lo, hi):
                clean = images[i]
                report.add_row(i, "psnr", psnr(synth[i - lo], clean), "synthetic")
                report.add_row(i, "psnr", psnr(anat[i - lo], clean), "anatomy")
                report.add_row(i, "ssim", ssim(synth[i - lo], clean), "synthetic")
                report.add_row(i, "ssim", ssim(anat[i - lo], clean), "anatomy")
        return report
    if protocol == "revision":
        if model is None:
            raise StateError("revision protocol needs a model checkpoint")
        for kind in TRAINING_KINDS:
            for severity in SEVERITIES:
                specs = _per_image_specs(kind, severity, n, seed)
                distorted = _corrupt_with_specs(images, specs)
                group = f"{kind}:{severity}"
                for lo, hi in _batched(n, batch_size):
                    synth, anat = model.reconstruct(distorted[lo:hi])
                    for i in range(lo, hi):
                        report.add_row(i, "psnr_input", psnr(distorted[i], images[i]), group)
                        report.add_row(i, "psnr_anatomy", psnr(anat[i - lo], images[i]), group)
                        report.add_row(i, "psnr_synthetic", psnr(synth[i - lo], distorted[i]), group)
        return report
    if protocol == "classification":
        if probe is None:
            raise StateError("classification protocol needs a probe checkpoint")
        logits = _probe_logits(probe, images, batch_size)
        _classification_summaries(report, logits, labels, "clean")
        return report
    if protocol == "robustness":
        if probe is None:
            raise StateError("robustness protocol needs a probe checkpoint")
        for kind in HELD_OUT_KINDS:
            for severity in SEVERITIES:
                specs = _per_image_specs(kind, severity, n, seed)
                distorted = _corrupt_with_specs(images, specs)
                logits = _probe_logits(probe, distorted, batch_size)
                _classification_summaries(report, logits, labels, f"{kind}:{severity}")
        return report
    raise ValueError(f"unknown protocol {protocol!r}")
