import inspect
import math

import numpy as np
import pytest

import trident.trainer
from luna import derive_rng, ram_read
from trident.audio_features import mfcc_extract
from trident.augmentation import (MCD_CONSTANT, SPY_COUNTER, AugmentationConfig, OpSpec, augment_audio,
                                  augment_rf, augment_sample, augment_visual, calibrate_scenario, compute_mcd,
                                  compute_snr, compute_ssim, get_preset, scenario_config)
from trident.core_types import AudioSegment
from trident.dataset import iter_samples, probe_samples, raw_samples
from trident.errors import ConfigurationError, ShapeError, TridentError
from trident.rf_features import IqSegment

from .conftest import TINY_IQ_RATE


def literal_mcd(real, aug):
    total = 0.0
    for t in range(real.shape[0]):
        total += math.sqrt(sum((real[t, m] - aug[t, m]) ** 2 for m in range(real.shape[1])))
    return 10.0 * math.sqrt(2.0) / math.log(10.0) * total / real.shape[0]


def literal_ssim(x, y, window=8, c1=0.01 ** 2, c2=0.03 ** 2):
    values = []
    for i in range(x.shape[0] - window + 1):
        for j in range(x.shape[1] - window + 1):
            a = x[i:i + window, j:j + window].ravel()
            b = y[i:i + window, j:j + window].ravel()
            mu_a, mu_b = a.mean(), b.mean()
            var_a = ((a - mu_a) ** 2).mean()
            var_b = ((b - mu_b) ** 2).mean()
            cov = ((a - mu_a) * (b - mu_b)).mean()
            values.append((2 * mu_a * mu_b + c1) * (2 * cov + c2)
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def audio_cfg(*specs):
    return AugmentationConfig(audio_ops=[OpSpec(name, params) for name, params in specs])


def visual_cfg(*specs):
    return AugmentationConfig(visual_ops=[OpSpec(name, params) for name, params in specs])


def test_audio_identities(rng):
    segment = AudioSegment(rng.uniform(-0.8, 0.8, 11025))
    for cfg in (audio_cfg(('volume_scaling', {'factor': 1.0})),
                audio_cfg(('background_noise', {'gain': 0.0})),
                audio_cfg()):
        out = augment_audio(segment, cfg, np.random.default_rng(0))
        assert np.array_equal(out.samples, segment.samples)


def test_background_noise_power():
    silence = AudioSegment(np.zeros(11025))
    cfg = audio_cfg(('background_noise', {'gain': 0.1}))
    powers = [np.mean(augment_audio(silence, cfg, np.random.default_rng(seed)).samples ** 2)
              for seed in range(10)]
    assert np.mean(powers) == pytest.approx(0.01, rel=0.05)


def test_audio_output_is_clipped(rng):
    cfg = audio_cfg(('volume_scaling', {'factor': 4.0}))
    out = augment_audio(AudioSegment(rng.uniform(-1, 1, 11025)), cfg, rng)
    assert np.abs(out.samples).max() <= 1.0
    assert len(out.samples) == 11025


def test_unknown_and_misplaced_ops():
    with pytest.raises(TridentError, match='unknown augmentation op'):
        audio_cfg(('reverb', {}))
    with pytest.raises(TridentError, match='not a audio op'):
        audio_cfg(('gaussian_blur', {'sigma': 1.0}))
    with pytest.raises(TridentError, match='outside'):
        visual_cfg(('rotation', {'degrees': 200.0}))
    with pytest.raises(TridentError, match='no parameter'):
        visual_cfg(('gaussian_blur', {'radius': 1.0}))
    with pytest.raises(ConfigurationError):
        get_preset('medium_noise')


def test_mcd():
    grid = np.random.default_rng(0).standard_normal((40, 40))
    assert compute_mcd(grid, grid) == 0.0
    one = np.zeros((1, 40))
    other = one.copy()
    other[0, 7] = 1.0
    assert compute_mcd(one, other) == pytest.approx(6.1418, abs=1e-4)
    assert MCD_CONSTANT == pytest.approx(10 * math.sqrt(2) / math.log(10), abs=1e-12)
    with pytest.raises(ShapeError):
        compute_mcd(grid, grid[:39])


def test_mcd_matches_literal_formula(rng):
    for _ in range(100):
        real, aug = rng.standard_normal((2, 40, 40)) * 5
        assert compute_mcd(real, aug) == pytest.approx(literal_mcd(real, aug), abs=1e-9)


def test_visual_identity_and_flip(rng):
    stack = rng.uniform(0, 1, (7, 3, 32, 32)).astype(np.float32)
    assert np.array_equal(augment_visual(stack, AugmentationConfig(), rng), stack)
    twice = visual_cfg(('horizontal_flip', {}), ('horizontal_flip', {}))
    assert np.array_equal(augment_visual(stack, twice, rng), stack)
    once = augment_visual(stack, visual_cfg(('horizontal_flip', {})), rng)
    assert np.array_equal(once, stack[..., ::-1])


def test_rotation_is_shared_by_the_stack(rng):
    frame = rng.uniform(0, 1, (3, 32, 32))
    stack = np.repeat(frame[None], 7, axis=0)
    out = augment_visual(stack, visual_cfg(('rotation', {'degrees': 30.0})), rng)
    assert out.shape == stack.shape
    assert not np.allclose(out[0], frame)
    for k in range(1, 7):
        assert np.array_equal(out[k], out[0])


def test_salt_pepper_fraction():
    stack = np.full((7, 3, 112, 112), 0.5, dtype=np.float32)
    cfg = visual_cfg(('salt_pepper', {'p': 0.1}))
    for seed in range(10):
        out = augment_visual(stack, cfg, np.random.default_rng(seed))
        altered = (out != 0.5).any(axis=1)
        assert 0.08 <= altered.mean() <= 0.12
        # a hit pixel is white or black in every channel
        assert np.all((out.min(axis=1) == out.max(axis=1))[altered])


def test_ssim_cases(rng):
    x = rng.uniform(0, 1, (32, 32))
    assert compute_ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    binary = (rng.random((32, 32)) < 0.5).astype(np.float64)
    assert compute_ssim(binary, 1.0 - binary) < 0
    with pytest.raises(ShapeError):
        compute_ssim(x, x[:, :31])
    with pytest.raises(ShapeError):
        compute_ssim(x[:4, :4], x[:4, :4])


def test_ssim_matches_literal_formula(rng):
    for _ in range(100):
        x, y = rng.uniform(0, 1, (2, 12, 14))
        assert compute_ssim(x, y) == pytest.approx(literal_ssim(x, y), abs=1e-9)


def test_ssim_of_stack_averages_luminance(rng):
    x = rng.uniform(0, 1, (2, 3, 16, 16))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    expected = np.mean([literal_ssim(x[n].mean(axis=0), y[n].mean(axis=0)) for n in range(2)])
    assert compute_ssim(x, y) == pytest.approx(expected, abs=1e-9)


def test_snr_formula(rng):
    signal = rng.standard_normal(1000)
    assert compute_snr(signal, signal) == pytest.approx(0.0, abs=1e-12)
    assert compute_snr(10 * signal, signal) == pytest.approx(20.0, abs=1e-9)
    for _ in range(100):
        s = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        n = rng.uniform(0.1, 3) * (rng.standard_normal(256) + 1j * rng.standard_normal(256))
        direct = 10 * math.log10(np.mean(np.abs(s) ** 2) / np.mean(np.abs(n) ** 2))
        assert compute_snr(s, n) == pytest.approx(direct, abs=1e-9)
    with pytest.raises(TridentError, match='noise power is zero'):
        compute_snr(signal, np.zeros(1000))


def iq_pair(rng, rate=4000.0):
    n = int(rate / 4)
    signal = IqSegment(rng.standard_normal(n) + 1j * rng.standard_normal(n), rate)
    noise = IqSegment(0.3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)), rate)
    return signal, noise


@pytest.mark.parametrize('target', [0.0, 5.0, 10.0, 15.0, 20.0])
def test_augment_rf_hits_target(rng, target):
    signal, noise = iq_pair(rng)
    mixed = augment_rf(signal, noise, target, rng)
    added = mixed.samples - signal.samples
    assert compute_snr(signal, added) == pytest.approx(target, abs=0.01)
    if target == 20.0:
        assert signal.power / np.mean(np.abs(added) ** 2) == pytest.approx(100.0, rel=0.01)


def test_augment_rf_errors(rng):
    signal, noise = iq_pair(rng)
    with pytest.raises(TridentError, match='noise power is zero'):
        augment_rf(signal, IqSegment(np.zeros(1000), 4000.0), 10.0, rng)
    with pytest.raises(ShapeError):
        augment_rf(signal, IqSegment(np.zeros(2000), 8000.0), 10.0, rng)


def test_snr_falls_with_noise_intensity(rng):
    signal, noise = iq_pair(rng)
    values = [compute_snr(signal, s * noise.samples) for s in np.linspace(0.1, 1.0, 10)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_augment_sample_is_reproducible(tiny_caches):
    sample = next(iter_samples(tiny_caches[0], with_iq=True))
    cfg = scenario_config(0.6, 0.6, (5.0, 10.0), seed=4)
    first = augment_sample(sample, cfg)
    assert ram_read(SPY_COUNTER) == 3
    second = augment_sample(sample, cfg)
    assert np.array_equal(first.audio.samples, second.audio.samples)
    assert np.array_equal(first.video, second.video)
    assert np.array_equal(first.rf, second.rf)
    assert not np.array_equal(first.video, sample.video)
    other = augment_sample(sample, scenario_config(0.6, 0.6, (5.0, 10.0), seed=5))
    assert not np.array_equal(first.audio.samples, other.audio.samples)


def test_rf_degradation_needs_iq(tiny_caches):
    sample = next(iter_samples(tiny_caches[0]))
    with pytest.raises(TridentError, match='raw I/Q'):
        augment_sample(sample, scenario_config(0.5, 0.5, (5.0, 10.0)))


def test_augment_sample_loads_lazy_frames(tiny_caches):
    import dataclasses
    cache = tiny_caches[1]
    raw = raw_samples(cache.entry, TINY_IQ_RATE)[0]
    assert raw.video is None
    degraded = augment_sample(raw, scenario_config(0.0, 0.0, seed=2))
    assert ram_read(SPY_COUNTER) == 2
    cached = next(iter_samples(cache))
    assert degraded.video.shape == cached.video.shape
    assert np.abs(degraded.video - cached.video).max() <= 0.5 / 255 + 1e-6
    with pytest.raises(TridentError, match='frame stack'):
        augment_sample(dataclasses.replace(raw, frames=None), scenario_config(0.0, 0.0))


def test_zero_intensity_is_identity(tiny_caches):
    probes = probe_samples(tiny_caches, count=20)
    cfg = scenario_config(0.0, 0.0)
    for probe in probes:
        audio = augment_audio(probe.audio, cfg, derive_rng(0, probe.sample_id, 'audio'))
        video = augment_visual(probe.video, cfg, derive_rng(0, probe.sample_id, 'visual'))
        assert compute_mcd(mfcc_extract(probe.audio), mfcc_extract(audio)) == 0.0
        assert compute_ssim(probe.video, video) == pytest.approx(1.0, abs=1e-9)


def test_calibration_needs_twenty_probes(tiny_caches):
    with pytest.raises(TridentError, match='at least 20'):
        calibrate_scenario(get_preset('low_noise'), probe_samples(tiny_caches, count=10))


@pytest.mark.slow
@pytest.mark.parametrize('name', ['low_noise', 'high_noise'])
def test_calibration_hits_targets(tiny_caches, name):
    preset = get_preset(name)
    cfg = calibrate_scenario(preset, probe_samples(tiny_caches, count=20), seed=0)
    assert abs(cfg.calibration['mcd_mean'] - preset.target_mcd) <= 0.5
    assert abs(cfg.calibration['ssim_mean'] - preset.target_ssim) <= 0.02
    assert cfg.rf_snr_db == preset.target_snr
    assert AugmentationConfig.from_dict(cfg.to_dict()).calibration == cfg.calibration


def test_training_path_never_augments():
    assert 'augment' not in inspect.getsource(trident.trainer)
