"""Command-line entry point.

Subcommands: gen-data, pretrain, eval, probe, robustness. Every run writes
one key=value manifest next to its artifacts with the resolved config, the
root seed, SHA-256 hashes of all inputs, and the artifact paths, which is
enough to reproduce the run. Dataset directories hold train.ornc /
val.ornc / test.ornc.

Config precedence: built-in defaults < preset < --config file (key=value
lines) < explicit flags.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, rng
from .corruption import CorruptionError, CorruptionSpec, TRAINING_KINDS, SEVERITIES
from .data import (
    FormatError,
    generate_synthetic_dataset,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    write_dataset,
)
from .layers import ConfigError
from .metrics import EvalReport
from .model import ModelConfig, ProbeClassifier, StateError, UnoranicPlusModel
from .tensor import NonFiniteError
from .train import (
    DETECTION_CLASSES,
    OptimizerState,
    TrainConfig,
    _classification_summaries,
    _corrupt_batch,
    detection_label,
    evaluate,
    pretrain,
    train_probe,
    write_history,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_STATE = 5
EXIT_NUMERIC = 6

SPLITS = ("train", "val", "test")

_MODEL_KEYS = ("patch_size", "embed_dim", "depth", "heads")
_TRAIN_KEYS = ("epochs", "batch_size", "base_lr", "weight_decay", "warmup_epochs", "max_steps")

PRESETS = {
    "small": {"patch_size": 4, "embed_dim": 128, "depth": 12, "heads": 16},
    "large": {"patch_size": 16, "embed_dim": 768, "depth": 12, "heads": 16},
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(path: Path, command: str, entries: dict, started: float) -> None:
    lines = [
        f"command={command}",
        f"tool_version={__version__}",
        f"wall_clock_seconds={time.time() - started:.3f}",
    ]
    lines += [f"{k}={v}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _split_path(data_dir: Path, split: str) -> Path:
    path = data_dir / f"{split}.ornc"
    if not path.exists():
        raise FormatError(f"{path}: dataset split not found")
    return path


def _read_config_file(path: Path | None) -> dict[str, str]:
    if path is None:
        return {}
    values = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}: malformed config line {line!r}")
        values[key.strip()] = value.strip()
    return values


def _resolve(defaults: dict, preset: dict, config_file: dict, flags: dict) -> dict:
    resolved = dict(defaults)
    resolved.update(preset)
    for key, value in config_file.items():
        if key not in resolved:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = value
    for key, value in flags.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _coerce(resolved: dict) -> dict:
    out = {}
    for key, value in resolved.items():
        if value is None or value == "":
            out[key] = None
        elif key in ("base_lr", "weight_decay"):
            out[key] = float(value)
        else:
            out[key] = int(value)
    return out


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = generate_synthetic_dataset(
        args.count, args.size, args.size, args.classes, args.seed
    )
    n = args.count
    bounds = {"train": (0, n * 8 // 10), "val": (n * 8 // 10, n * 9 // 10), "test": (n * 9 // 10, n)}
    entries = {"seed": args.seed, "count": n, "size": args.size, "classes": args.classes}
    for split in SPLITS:
        lo, hi = bounds[split]
        path = out / f"{split}.ornc"
        write_dataset(path, images[lo:hi], labels[lo:hi], args.classes)
        entries[f"artifact_{split}"] = path
        entries[f"sha256_{split}"] = _sha256(path)
        entries[f"count_{split}"] = hi - lo
    _write_manifest(out / "manifest.txt", "gen-data", entries, started)
    print(f"wrote {', '.join(f'{s}.ornc' for s in SPLITS)} to {out}")
    return EXIT_OK


def _build_train_config(resolved: dict, seed: int, batch: int | None) -> TrainConfig:
    values = _coerce({k: resolved[k] for k in _TRAIN_KEYS})
    return TrainConfig(
        epochs=values["epochs"],
        batch_size=batch if batch is not None else values["batch_size"],
        base_lr=values["base_lr"],
        weight_decay=values["weight_decay"],
        warmup_epochs=values["warmup_epochs"],
        seed=seed,
        max_steps=values["max_steps"],
    )


def cmd_pretrain(args) -> int:
    started = time.time()
    data_dir = Path(args.data)
    train_path = _split_path(data_dir, "train")
    images, _, info = load_dataset(train_path)

    defaults = {
        "patch_size": 4, "embed_dim": 128, "depth": 12, "heads": 16,
        "epochs": 150, "batch_size": 64, "base_lr": 1.5e-4,
        "weight_decay": 0.05, "warmup_epochs": 10, "max_steps": None,
    }
    flags = {
        "epochs": args.epochs, "batch_size": args.batch, "base_lr": args.lr,
        "weight_decay": args.weight_decay, "warmup_epochs": args.warmup_epochs,
        "max_steps": args.max_steps, "depth": args.depth,
        "embed_dim": args.embed_dim, "heads": args.heads, "patch_size": args.patch_size,
    }
    resolved = _resolve(defaults, PRESETS[args.preset], _read_config_file(
        Path(args.config) if args.config else None), flags)
    arch = _coerce({k: resolved[k] for k in _MODEL_KEYS})
    config = ModelConfig(
        image_h=info.height, image_w=info.width, channels=info.channels,
        patch_size=arch["patch_size"], embed_dim=arch["embed_dim"],
        depth=arch["depth"], heads=arch["heads"],
    )
    train_config = _build_train_config(resolved, args.seed, None)

    model = UnoranicPlusModel(config, seed=args.seed)
    state, history = pretrain(model, images, train_config)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensors = model.state_dict()
    tensors.update({k: v.astype("<f4") for k, v in state.to_tensors().items()})
    blob = dict(config.to_dict(), opt_step=str(state.t), epoch=str(train_config.epochs),
                has_opt_moments="1")
    save_checkpoint(out, blob, tensors)
    history_path = out.with_suffix(out.suffix + ".history.csv")
    write_history(history_path, history)

    entries = {"seed": args.seed, "data": train_path, "sha256_data": _sha256(train_path),
               "artifact_checkpoint": out, "artifact_history": history_path,
               "sha256_checkpoint": _sha256(out)}
    entries.update({f"config_{k}": v for k, v in sorted(resolved.items())})
    _write_manifest(out.with_suffix(out.suffix + ".manifest"), "pretrain", entries, started)
    last = history[-1][2] if history else float("nan")
    print(f"pretrained {state.t} steps, final loss {last:.5f}, checkpoint {out}")
    return EXIT_OK


def _load_model(
    ckpt_path: Path, seed: int = 0, allow_missing: bool = False
) -> tuple[UnoranicPlusModel, dict]:
    blob, tensors = load_checkpoint(ckpt_path)
    model = UnoranicPlusModel(ModelConfig.from_dict(blob), seed=seed)
    weights = {
        k: v
        for k, v in tensors.items()
        if not k.startswith("opt.") and not k.startswith(ProbeClassifier.HEAD)
    }
    model.load_state(weights, allow_missing=allow_missing)
    return model, blob


def _check_data_matches(model: UnoranicPlusModel, info) -> None:
    want = (model.config.channels, model.config.image_h, model.config.image_w)
    got = (info.channels, info.height, info.width)
    if want != got:
        raise StateError(f"checkpoint expects images {want}, dataset has {got}")


def _dump_triplets(out_dir: Path, clean, distorted, revised, spec: CorruptionSpec) -> Path:
    """Raw u8 dump of (clean, distorted, revised) triplets for inspection."""
    stack = np.stack([clean, distorted, revised], axis=1)  # (N, 3, C, H, W)
    path = out_dir / f"triplets_{spec.kind}_{spec.severity}.u8"
    path.write_bytes(np.round(np.clip(stack, 0, 1) * 255).astype(np.uint8).tobytes())
    return path


def cmd_eval(args) -> int:
    started = time.time()
    model, _ = _load_model(Path(args.ckpt))
    test_path = _split_path(Path(args.data), "test")
    images, labels, info = load_dataset(test_path)
    _check_data_matches(model, info)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = evaluate(model, images, labels, args.protocol, seed=args.seed,
                      batch_size=args.batch)
    report_path = out_dir / f"{args.protocol}.csv"
    report.to_csv(report_path)
    entries = {"seed": args.seed, "ckpt": args.ckpt, "sha256_ckpt": _sha256(Path(args.ckpt)),
               "data": test_path, "sha256_data": _sha256(test_path),
               "protocol": args.protocol, "artifact_report": report_path}

    if args.protocol == "revision":
        shown = min(8, images.shape[0])
        for kind in TRAINING_KINDS:
            for severity in SEVERITIES:
                seed = int(rng.hash_words(args.seed, rng.string_hash(kind), severity, 0))
                spec = CorruptionSpec(kind, severity, seed)
                from .corruption import apply

                distorted = apply(images[:shown], spec)
                _, revised = model.reconstruct(distorted)
                path = _dump_triplets(out_dir, images[:shown], distorted, revised, spec)
                entries[f"artifact_triplets_{kind}_{severity}"] = path
                entries[f"spec_triplets_{kind}_{severity}"] = spec.to_string()
    _write_manifest(out_dir / f"{args.protocol}.manifest", "eval", entries, started)
    print(f"wrote {report_path}")
    return EXIT_OK


def detection_report(probe: ProbeClassifier, images: np.ndarray, seed: int,
                     batch_size: int) -> EvalReport:
    """ACC and macro-AUC of the corruption-kind classifier on a test split.

    Corruption classes are assigned round-robin (balanced coverage even on
    small splits); severities and noise seeds are drawn from the seed."""
    from .corruption import apply

    n = images.shape[0]
    distorted = np.empty_like(images)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        cls = i % len(DETECTION_CLASSES)
        if DETECTION_CLASSES[cls] == "identity":
            spec = CorruptionSpec("identity", 0, 0)
        else:
            severity = 1 + int(rng.hash_words(seed, 0xE7, i) % np.uint64(3))
            spec = CorruptionSpec(DETECTION_CLASSES[cls], severity,
                                  int(rng.hash_words(seed, 0xE8, i)))
        distorted[i] = apply(images[i : i + 1], spec)[0]
        labels[i] = detection_label(spec)
    report = EvalReport()
    logits = np.concatenate([
        probe.predict_logits(distorted[lo : lo + batch_size])
        for lo in range(0, n, batch_size)
    ])
    _classification_summaries(report, logits, labels, "detection")
    return report


def cmd_probe(args) -> int:
    started = time.time()
    model, blob = _load_model(Path(args.ckpt), allow_missing=args.allow_missing)
    data_dir = Path(args.data)
    train_path = _split_path(data_dir, "train")
    test_path = _split_path(data_dir, "test")
    images, labels, info = load_dataset(train_path)
    _check_data_matches(model, info)

    num_classes = len(DETECTION_CLASSES) if args.task == "detect" else info.num_classes
    probe = ProbeClassifier(model, num_classes, head_depth=args.head_depth, seed=args.seed)
    defaults = {"epochs": 30, "batch_size": 64, "base_lr": 1e-3, "weight_decay": 0.0,
                "warmup_epochs": 1, "max_steps": None}
    flags = {"epochs": args.epochs, "batch_size": args.batch, "base_lr": args.lr,
             "max_steps": args.max_steps, "weight_decay": None, "warmup_epochs": None}
    resolved = _resolve(defaults, {}, {}, flags)
    train_config = _build_train_config(resolved, args.seed, None)
    train_probe(probe, images, labels, args.task, train_config)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    probe_blob = dict(blob)
    probe_blob.update(task=args.task, num_classes=str(num_classes),
                      head_depth=str(args.head_depth))
    save_checkpoint(out, probe_blob, probe.state_dict())

    test_images, test_labels, _ = load_dataset(test_path)
    if args.task == "detect":
        report = detection_report(probe, test_images, args.seed + 1, args.batch or 64)
    else:
        report = evaluate(None, test_images, test_labels, "classification", probe=probe,
                          batch_size=args.batch or 64)
    report_path = out.with_suffix(out.suffix + ".report.csv")
    report.to_csv(report_path)

    entries = {"seed": args.seed, "task": args.task, "ckpt": args.ckpt,
               "sha256_ckpt": _sha256(Path(args.ckpt)),
               "data": data_dir, "sha256_train": _sha256(train_path),
               "sha256_test": _sha256(test_path),
               "artifact_probe": out, "artifact_report": report_path}
    entries.update({f"config_{k}": v for k, v in sorted(resolved.items())})
    _write_manifest(out.with_suffix(out.suffix + ".manifest"), "probe", entries, started)
    for metric, group, value, _ in report.aggregates():
        print(f"{metric}[{group}] = {value:.4f}")
    return EXIT_OK


def cmd_robustness(args) -> int:
    started = time.time()
    model, _ = _load_model(Path(args.ckpt))
    probe_blob, probe_tensors = load_checkpoint(Path(args.probe_ckpt))
    if probe_blob.get("task") != "disease":
        raise StateError("robustness sweep needs a disease-task probe checkpoint")

    for name, array in probe_tensors.items():
        if name.startswith(UnoranicPlusModel.ENCODER):
            if not np.array_equal(array, model.params[name].data.astype("<f4")):
                raise StateError(
                    f"probe checkpoint encoder parameter {name!r} does not match --ckpt"
                )
    probe = ProbeClassifier(
        model,
        int(probe_blob["num_classes"]),
        head_depth=int(probe_blob["head_depth"]),
    )
    head_tensors = {k: v for k, v in probe_tensors.items() if k.startswith(ProbeClassifier.HEAD)}
    missing = set(probe.params) - set(head_tensors)
    if missing:
        raise StateError(f"probe checkpoint missing head parameters: {sorted(missing)}")
    for name, array in head_tensors.items():
        probe.params[name].data = np.ascontiguousarray(array, dtype=probe.params[name].data.dtype)

    test_path = _split_path(Path(args.data), "test")
    images, labels, info = load_dataset(test_path)
    _check_data_matches(model, info)
    report = evaluate(None, images, labels, "robustness", probe=probe, seed=args.seed,
                      batch_size=args.batch)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "robustness.csv"
    report.to_csv(report_path)
    entries = {"seed": args.seed, "ckpt": args.ckpt, "probe_ckpt": args.probe_ckpt,
               "sha256_ckpt": _sha256(Path(args.ckpt)),
               "sha256_probe": _sha256(Path(args.probe_ckpt)),
               "data": test_path, "sha256_data": _sha256(test_path),
               "artifact_report": report_path}
    _write_manifest(out_dir / "robustness.manifest", "robustness", entries, started)
    print(f"wrote {report_path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unoranic-plus",
        description="Feature-orthogonalizing ViT autoencoder: data generation, "
        "pretraining, evaluation, probing, robustness sweeps.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic ORNC dataset (8:1:1 split)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=1000, help="total image count")
    p.add_argument("--size", type=int, default=28, help="square image size")
    p.add_argument("--classes", type=int, default=2, help="class count (2..8)")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train encoder and both decoders")
    p.add_argument("--data", required=True, help="dataset directory (uses train.ornc)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="small")
    p.add_argument("--config", help="key=value config file (overrides preset)")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--lr", type=float, help="base learning rate (per batch of 64)")
    p.add_argument("--weight-decay", type=float, help="decoupled weight decay")
    p.add_argument("--warmup-epochs", type=int, help="linear warmup epochs")
    p.add_argument("--max-steps", type=int, help="hard step cap (overrides epochs)")
    p.add_argument("--depth", type=int, help="transformer blocks per stack")
    p.add_argument("--embed-dim", type=int, help="token embedding dimension")
    p.add_argument("--heads", type=int, help="attention heads")
    p.add_argument("--patch-size", type=int, help="square patch size")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="reconstruction or corruption-revision report")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory (uses test.ornc)")
    p.add_argument("--protocol", choices=("reconstruction", "revision"), required=True)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--seed", type=int, default=0, help="corruption seed")
    p.add_argument("--batch", type=int, default=64, help="evaluation batch size")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="train a frozen-encoder classifier head")
    p.add_argument("--ckpt", required=True, help="pretrained model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--task", choices=("disease", "detect"), required=True)
    p.add_argument("--out", required=True, help="probe checkpoint output path")
    p.add_argument("--head-depth", type=int, default=2, help="head transformer blocks")
    p.add_argument("--epochs", type=int, help="probe training epochs")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--max-steps", type=int, help="hard step cap")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--allow-missing", action="store_true",
                   help="accept checkpoints without decoder parameters "
                   "(e.g. reuse the encoder of another probe checkpoint)")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("robustness", help="probe accuracy under held-out corruptions")
    p.add_argument("--ckpt", required=True, help="pretrained model checkpoint")
    p.add_argument("--probe-ckpt", required=True, help="disease probe checkpoint")
    p.add_argument("--data", required=True, help="dataset directory (uses test.ornc)")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--seed", type=int, default=0, help="corruption seed")
    p.add_argument("--batch", type=int, default=64, help="evaluation batch size")
    p.set_defaults(func=cmd_robustness)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, CorruptionError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StateError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
