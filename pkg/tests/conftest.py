"""Shared fixtures: the smoke-scale dataset, model, and probes.

Thread pinning happens before numpy loads so the acceptance suite's runtime
criteria measure single-threaded execution, and so BLAS reductions are
reproducible run to run.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from unoranic_plus.data import generate_synthetic_dataset
from unoranic_plus.model import ModelConfig, ProbeClassifier, UnoranicPlusModel
from unoranic_plus.train import TrainConfig, pretrain, train_probe

# the desk-scale acceptance profile: dataset/architecture/steps/batch are
# pinned by the acceptance criteria; optimizer values are build choices
SMOKE_DATASET = dict(count=1000, height=28, width=28, classes=2, seed=42)
SMOKE_MODEL = ModelConfig(image_h=28, image_w=28, channels=1, patch_size=4,
                          embed_dim=32, depth=2, heads=4)
SMOKE_TRAIN = dict(batch_size=64, base_lr=7e-3, weight_decay=0.0, seed=0, max_steps=500)
PROBE_TRAIN = dict(batch_size=64, base_lr=3e-3, weight_decay=0.0)


@dataclass
class SmokeData:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class SmokeRun:
    model: UnoranicPlusModel
    history: list
    elapsed_seconds: float


@pytest.fixture(scope="session")
def smoke_data() -> SmokeData:
    images, labels = generate_synthetic_dataset(**SMOKE_DATASET)
    x = images.astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return SmokeData(x[:800], y[:800], x[800:900], y[800:900], x[900:], y[900:])


@pytest.fixture(scope="session")
def smoke_run(smoke_data) -> SmokeRun:
    model = UnoranicPlusModel(SMOKE_MODEL, seed=0)
    start = time.monotonic()
    _, history = pretrain(model, smoke_data.train_x, TrainConfig(**SMOKE_TRAIN))
    return SmokeRun(model, history, time.monotonic() - start)


@pytest.fixture(scope="session")
def disease_probe(smoke_run, smoke_data) -> ProbeClassifier:
    probe = ProbeClassifier(smoke_run.model, num_classes=2, head_depth=2, seed=1)
    config = TrainConfig(seed=1, max_steps=400, **PROBE_TRAIN)
    train_probe(probe, smoke_data.train_x, smoke_data.train_y, "disease", config)
    return probe


@pytest.fixture(scope="session")
def detect_probe(smoke_run, smoke_data) -> ProbeClassifier:
    probe = ProbeClassifier(smoke_run.model, num_classes=8, head_depth=2, seed=2)
    config = TrainConfig(seed=2, max_steps=800, **PROBE_TRAIN)
    train_probe(probe, smoke_data.train_x, smoke_data.train_y, "detect", config)
    return probe
