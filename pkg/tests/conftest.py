import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from midrank.data import SyntheticConfig, generate_synthetic  # noqa: E402
from midrank.training import TrainConfig, train_ensemble  # noqa: E402


@pytest.fixture(scope="session")
def small_data():
    train = generate_synthetic(SyntheticConfig(dim=6, num_sequences=60, seq_len=8, noise_sigma=0.05, seed=3))
    test = generate_synthetic(
        SyntheticConfig(dim=6, num_sequences=20, seq_len=8, noise_sigma=0.05, seed=3, split="test")
    )
    return train, test


@pytest.fixture(scope="session")
def small_ensemble(small_data):
    train, _ = small_data
    cfg = TrainConfig(lambdas=(2, 3, 4, 5), positives_per_sequence=4, cv_folds=0, mu=0.1, seed=3)
    return train_ensemble(train.sequences, cfg)
