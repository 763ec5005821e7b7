"""Shared fixtures for the relgraph test suite"""

import os
import sys

import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from relgraph.numeric_core import Rng
from relgraph.synthdata import gen_dataset


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def desk_dataset():
    """8 training identities, 4 test identities, 2×2 maps with 4 channels"""
    return gen_dataset(n_train_ids=8, n_test_ids=4, per_id_per_domain=3,
                       dims=(4, 2, 2), domain_gap=1.0, seed=3)


@pytest.fixture
def small_config():
    """Run-config mapping for quick training runs"""
    from config.run_config import default_values
    values = default_values()
    values.update({
        "channels": 4, "height": 2, "width": 2, "dim": 4, "embed_dim": 8,
        "epochs": 3, "batch": 16, "lr": 0.05, "dropout_p": 0.0, "relation_dim": 4,
    })
    values["gen"] = dict(values["gen"], train_ids=6, test_ids=3, per_id=3)
    return values
