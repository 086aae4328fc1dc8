import numpy as np
import pytest
import torch

from trident.bench import Clock
from trident.dataset import MultiModalDataset, iter_samples, make_loader, raw_samples
from trident.errors import TridentError
from trident.fusion import GmuFusion, LateFusion, late_fuse
from trident.model_zoo import build_for_modality
from trident.systems import (GmuFusionSystem, LateFusionSystem, UnimodalSystem, batch_inputs, build_system,
                             modality_combinations, sample_inputs)

from .conftest import TINY_IQ_RATE


@pytest.fixture(scope='module')
def small_models():
    torch.manual_seed(0)
    return {'audio': build_for_modality('audio', 'audio_lenet', shrink=0.25),
            'visual': build_for_modality('visual', 'mobilenet_3d', shrink=0.0625),
            'rf': build_for_modality('rf', 'mobilenet_3d', shrink=0.0625)}


def first_batch(caches, modalities, size=6):
    return next(iter(make_loader(MultiModalDataset(caches, modalities), batch_size=size)))


def test_modality_combinations():
    assert modality_combinations() == [('audio', 'visual'), ('audio', 'rf'), ('visual', 'rf'),
                                       ('audio', 'visual', 'rf')]
    assert modality_combinations(('audio', 'rf')) == [('audio', 'rf')]


def test_unimodal_system(tiny_caches, small_models):
    system = build_system('unimodal', {'audio': small_models['audio']})
    assert isinstance(system, UnimodalSystem)
    assert system.name == 'unimodal:audio_audio_lenet'
    probs = system.predict_batch(first_batch(tiny_caches, ('audio',)))
    assert probs.shape == (6, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_late_fusion_system_combines_unimodal_outputs(tiny_caches, small_models):
    fusion = LateFusion(['audio', 'rf'])
    with torch.no_grad():
        fusion.log_weights.copy_(torch.tensor([0.5, -0.2]))
    system = build_system('late', small_models, fusion)
    assert isinstance(system, LateFusionSystem)
    assert system.modalities == ('audio', 'rf')
    batch = first_batch(tiny_caches, ('audio', 'rf'))
    probs = system.predict_batch(batch)
    with torch.no_grad():
        unimodal = [small_models[m](batch[m])['probs'].numpy() for m in ('audio', 'rf')]
    np.testing.assert_allclose(probs, late_fuse(unimodal, fusion.weights), atol=1e-6)


def test_gmu_system(tiny_caches, small_models):
    dims = [small_models[m].feature_dim for m in ('audio', 'visual', 'rf')]
    system = build_system('gmu', small_models, GmuFusion(dims, hidden_dim=8))
    assert isinstance(system, GmuFusionSystem)
    assert system.name == 'gmu:audio_audio_lenet+visual_mobilenet_3d+rf_mobilenet_3d'
    probs = system.predict_batch(first_batch(tiny_caches, ('audio', 'visual', 'rf'), size=3))
    assert probs.shape == (3, 2)


def test_system_errors(small_models):
    with pytest.raises(TridentError, match='unknown fusion kind'):
        build_system('attention', small_models)
    with pytest.raises(TridentError, match='needs models'):
        build_system('late', {'audio': small_models['audio']}, LateFusion(['audio', 'rf']))
    system = build_system('unimodal', {'rf': small_models['rf']})
    with pytest.raises(TridentError, match='lacks modality'):
        system.forward_all({'audio': torch.zeros(1, 1, 40, 40)})


def test_detect_from_source_files(tiny_caches, small_models):
    cache = tiny_caches[2]
    samples = raw_samples(cache.entry, TINY_IQ_RATE)
    system = build_system('late', small_models, LateFusion(['audio', 'rf']))
    clock = Clock()
    detected = system.detect(samples[1], clock)
    assert set(clock._current) == {'audio_features', 'rf_features', 'model_forward', 'fusion'}
    batch = first_batch([cache], ('audio', 'rf'), size=4)
    np.testing.assert_allclose(detected, system.predict_batch(batch)[1], atol=1e-4)


def test_raw_and_cached_inputs_agree(tiny_caches):
    cache = tiny_caches[1]
    raw = raw_samples(cache.entry, TINY_IQ_RATE)[0]
    inputs = sample_inputs(raw, ('visual',))
    cached = batch_inputs([next(iter_samples(cache))], ('visual',))
    assert inputs['visual'].shape == (1, 3, 7, 112, 112)
    assert (inputs['visual'] - cached['visual']).abs().max() <= 0.5 / 255 + 1e-6