"""
Shared fixtures: the default six-class toy mixture with a trained original
model, and a much smaller mixture for loops that need many optimisation runs.
"""
from pathlib import Path

import pytest

from repunlearn.datasets import generate_toy_mixture, split_class_unlearn
from repunlearn.encoder import train_classifier
from repunlearn.numerics import seeded_rng
from repunlearn.schemas import (
    EvalConfig,
    ExperimentConfig,
    MixtureConfig,
    ModelConfig,
    SweepGrid,
    TrainConfig,
    UnlearnSection,
)


@pytest.fixture(scope="session")
def toy_data():
    """(train, test) with the default 6 x 250 samples in dim 10"""
    return generate_toy_mixture(MixtureConfig())


@pytest.fixture(scope="session")
def toy_model(toy_data):
    train, _ = toy_data
    config = ModelConfig()
    return train_classifier(config.train, train, config.layer_dims(train.dim, train.n_classes), seeded_rng(0))


@pytest.fixture(scope="session")
def toy_class_split(toy_data):
    return split_class_unlearn(toy_data[0], [0])


@pytest.fixture(scope="session")
def small_data():
    return generate_toy_mixture(MixtureConfig(n_classes=3, dim=4, n_per_class=40, seed=7))


@pytest.fixture(scope="session")
def small_model(small_data):
    train, _ = small_data
    config = ModelConfig(hidden_dims=[8], train=TrainConfig(epochs=20, batch_size=32))
    return train_classifier(config.train, train, config.layer_dims(train.dim, train.n_classes), seeded_rng(1))


@pytest.fixture(scope="session")
def small_class_split(small_data):
    return split_class_unlearn(small_data[0], [0])


def tiny_config(output_dir: Path, **updates) -> ExperimentConfig:
    """A config small enough for end-to-end runs inside the test suite"""
    config = ExperimentConfig(
        dataset=MixtureConfig(n_classes=3, dim=4, n_per_class=30),
        model=ModelConfig(hidden_dims=[8], train=TrainConfig(epochs=5, batch_size=32), finetune_epochs=2),
        unlearn=UnlearnSection(depth=0, max_epochs=3, retain_batch=16, forget_batch=16, reference_batch=16),
        eval=EvalConfig(seeds=[0, 1], mia_thresholds=21),
        sweep=SweepGrid(betas=[1e-3, 1e-1], depths=[0, 1], seeds=[0]),
        output_dir=str(output_dir),
    )
    if updates:
        config = ExperimentConfig.model_validate({**config.model_dump(), **updates})
    return config


@pytest.fixture
def tiny_config_factory():
    return tiny_config

