"""Shared fixtures: small generators, datasets, models and configs.

Everything here is sized so that the whole default suite runs in seconds;
desk-scale runs live behind the ``slow`` marker.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from flowmix.model import flowgen
from flowmix.model.flowgen import FlowDataset
from flowmix.model.gmvae import GmmParams, GmvaeModel
from flowmix.model.numkit import Rng
from flowmix.model.trainer import TrainConfig


# ───────────────────────────────────────────────────────────────────────
# 1.  Random streams
# ───────────────────────────────────────────────────────────────────────

@pytest.fixture
def rng() -> Rng:
    return Rng(1234)


@pytest.fixture
def np_rng() -> np.random.Generator:
    """numpy generator for test inputs only; library code never uses it."""
    return np.random.default_rng(20240601)


# ───────────────────────────────────────────────────────────────────────
# 2.  Datasets
# ───────────────────────────────────────────────────────────────────────

@pytest.fixture
def tiny_dataset() -> FlowDataset:
    """12 noisy samples on a 4 x 4 grid (P = 48)."""
    return flowgen.generate(n=12, height=4, width=4, noise_frac=0.05, seed=3)


@pytest.fixture
def tiny_dataset_path(tmp_path: Path, tiny_dataset: FlowDataset) -> Path:
    path = tmp_path / "tiny.gmvf"
    flowgen.save(path, tiny_dataset)
    return path


# ───────────────────────────────────────────────────────────────────────
# 3.  Models and configs
# ───────────────────────────────────────────────────────────────────────

@pytest.fixture
def toy_gmm() -> GmmParams:
    return GmmParams.create(
        mu=[[0.5, -0.3], [-1.0, 0.8], [0.2, 1.1]],
        sigma2=[0.5, 1.0, 2.0],
        pi_logits=[0.1, -0.2, 0.3],
    )


@pytest.fixture
def toy_model(toy_gmm: GmmParams) -> GmvaeModel:
    """float64 model with P = 8, D = 2, K = 3 for exact gradient checks."""
    return GmvaeModel.create(
        n_features=8,
        latent_dim=2,
        rng=Rng(7),
        gmm=toy_gmm,
        hidden=(5,),
        dtype=np.float64,
    )


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig(
        epochs=4,
        warmup_epochs=2,
        batch_size=4,
        n_clusters=2,
        latent_dim=2,
        hidden=(8,),
        seed=5,
    )
