import numpy as np
import pytest

from fcl_sim.contrastive import AugmentationSpec, ContrastiveConfig, FeatureBatch
from fcl_sim.data import Dataset, PartitionSpec, SyntheticSpec
from fcl_sim.experiments import ExperimentConfig
from fcl_sim.evaluation import FinetuneConfig
from fcl_sim.federation import FederationConfig
from fcl_sim.numeric_core import ArchitectureConfig


def unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def feature_batch(rng, n, d, origin, birth_round=0):
    return FeatureBatch.from_values(unit_rows(rng, n, d), origin, birth_round)


def flat_dataset(rng, n, dim=6, n_classes=3):
    samples = rng.uniform(0.0, 1.0, size=(n, dim))
    labels = np.arange(n) % n_classes
    return Dataset(samples, labels, n_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_experiment(tmp_path):
    """A config small enough for end-to-end command tests."""
    return ExperimentConfig(
        synthetic=SyntheticSpec(n_classes=3, samples_per_class=20, grid=(6, 6, 1)),
        partition=PartitionSpec(n_devices=3, skew_param=0.6),
        model=ArchitectureConfig(encoder_hidden=(32,), projection_hidden=32),
        contrastive=ContrastiveConfig(feature_dim=8, batch_size=8, bank_capacity=32),
        augment=AugmentationSpec(),
        federation=FederationConfig(n_devices=3, rounds=2, share_count=4),
        finetune=FinetuneConfig(epochs=2, rounds=2, lr=1e-3),
        label_fractions=(0.5, 1.0),
        seeds=(0,),
        output_dir=str(tmp_path / "runs"),
    )
