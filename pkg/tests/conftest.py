"""Shared fixtures: tiny configs, datasets, and a pre-trained checkpoint."""

from __future__ import annotations

import numpy as np
import pytest

from uenl.config import ExperimentConfig
from uenl.harness import Checkpoint, build_datasets, train
from uenl.model import BackboneConfig, UncertaintyHeadConfig, init_params
from uenl.rng import RngStream


def tiny_experiment_config(**overrides) -> ExperimentConfig:
    """A 2-class linearly separable problem that trains in about a second."""
    d = {
        "method": "uenl",
        "seed": 7,
        "epochs": 20,
        "batch_size": 64,
        "lr": 0.1,
        "lr_drop_epochs": [14],
        "dropout": 0.0,
        "delta": 8,
        "lambda": 0.1,
        "backbone": {"input_dim": 6, "hidden_dims": [16, 8], "num_classes": 2},
        "data": {
            "id": {
                "kind": "gaussian_clusters",
                "dim": 6,
                "num_classes": 2,
                "n_train_per_class": 150,
                "n_test_per_class": 80,
                "sigma": 0.2,
                "seed": 11,
            },
            "ood": [
                {"kind": "uniform", "n": 160, "low": -2.0, "high": 2.0, "seed": 21},
                {"kind": "gaussian_noise", "n": 160, "seed": 22},
            ],
        },
    }
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="session")
def tiny_checkpoint() -> Checkpoint:
    return train(tiny_experiment_config())


@pytest.fixture(scope="session")
def tiny_bundle():
    return build_datasets(tiny_experiment_config())


@pytest.fixture()
def small_params():
    """Fresh random small model (3 classes, 5 inputs, 8-dim head)."""
    backbone = BackboneConfig(input_dim=5, hidden_dims=(12, 6), num_classes=3, dropout_rate=0.0)
    head = UncertaintyHeadConfig(embed_dim=6, delta=8)
    return init_params(backbone, head, RngStream(99))


def random_scores(rng: np.random.Generator, n: int, m: int, ties: bool):
    """A random (id, ood) score pair; integer grids force heavy ties."""
    if ties:
        id_s = rng.integers(0, 8, size=n).astype(np.float64)
        ood_s = rng.integers(-2, 6, size=m).astype(np.float64)
    else:
        id_s = rng.standard_normal(n) + 0.8
        ood_s = rng.standard_normal(m)
    return id_s, ood_s
