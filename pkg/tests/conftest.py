import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mvadapt import Dataset, SyntheticSpec, generate_synthetic_dataset


def small_spec(**overrides) -> SyntheticSpec:
    base = dict(seen_classes=4, unseen_classes=4, objects_per_class=8, views=6,
                dino_dim=16, clip_dim=8, visual_noise_sigma=0.15,
                view_jitter=0.4, lexicon_concepts=12, data_seed=11)
    base.update(overrides)
    return SyntheticSpec(**base)


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    return generate_synthetic_dataset(small_spec())


@pytest.fixture(scope="session")
def standard_fixture() -> Dataset:
    """The desk-scale fixture used by the acceptance suite."""
    return generate_synthetic_dataset(SyntheticSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(42)
