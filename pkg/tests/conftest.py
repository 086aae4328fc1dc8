import numpy as np
import pytest
import torch

from luna import ram_reset
from trident.core_types import load_manifest
from trident.dataset import load_split, preprocess_manifest
from trident.synth_data import SynthConfig, generate_dataset

# small enough for a CPU test run: 12 recordings of 4 segments each, so the
# per-class split is 4/1/1
TINY = dict(n_files=12, segments_per_file=4, difficulty=0.0, iq_rate=32000.0, frame_size=48, short_clips=True)
TINY_IQ_RATE = TINY['iq_rate']


@pytest.fixture(scope='session')
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp('tiny')
    generate_dataset(SynthConfig(seed=3, **TINY), str(root))
    return root


@pytest.fixture(scope='session')
def tiny_entries(tiny_root):
    return load_manifest(str(tiny_root / 'manifest.tsv'))


@pytest.fixture(scope='session')
def tiny_counts(tiny_root, tiny_entries):
    return preprocess_manifest(tiny_entries, str(tiny_root / 'cache'), TINY_IQ_RATE)


@pytest.fixture(scope='session')
def tiny_caches(tiny_root, tiny_entries, tiny_counts):
    return load_split(tiny_entries, str(tiny_root / 'cache'))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _fresh_state():
    ram_reset()
    torch.manual_seed(0)
    yield
