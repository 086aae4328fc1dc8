import math

import numpy as np
import pytest

from trident.audio_features import (DEFAULT_MFCC, MfccConfig, frame_signal, load_wav, log_mel_energies,
                                    mel_filterbank, mfcc_extract, mfcc_tensor, save_wav, segment_audio)
from trident.core_types import AUDIO_RATE, AudioSegment
from trident.errors import ShapeError, TridentError


def reference_mel_filterbank(n_fft=1024, n_mels=40, sr=AUDIO_RATE):
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2), n_mels + 2))
    freqs = np.linspace(0.0, sr / 2, n_fft // 2 + 1)
    bank = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - left) / (center - left)
        falling = (right - freqs) / (right - center)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def reference_mfcc(samples, frame=1024, hop=256, n_frames=40, n_coeffs=40, floor=1e-10):
    n = np.arange(frame)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * n / frame)
    bank = reference_mel_filterbank(frame)
    k = np.arange(n_coeffs)[:, None]
    m = np.arange(bank.shape[0])[None, :]
    dct = np.sqrt(2.0 / bank.shape[0]) * np.cos(np.pi * k * (2 * m + 1) / (2 * bank.shape[0]))
    dct[0] /= np.sqrt(2.0)
    rows = []
    for t in range(n_frames):
        x = samples[t * hop:t * hop + frame] * window
        power = np.abs(np.fft.rfft(x)) ** 2
        rows.append(dct @ np.log(bank @ power + floor))
    return np.array(rows)


def test_frame_signal_layout():
    frames = frame_signal(np.zeros(11025))
    assert frames.shape == (40, 1024)
    assert not frames.any()
    ones = frame_signal(np.ones(11025))
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(1024) / 1024)
    np.testing.assert_allclose(ones, np.broadcast_to(window, (40, 1024)), atol=1e-12)
    # frame t starts at t * hop; the last frame ends at sample 11007
    ramp = np.arange(11025, dtype=np.float64)
    frames = frame_signal(ramp) / np.where(window == 0, 1, window)
    assert frames[39, -1] == pytest.approx(39 * 256 + 1023)


def test_frame_signal_wrong_length():
    with pytest.raises(ShapeError):
        frame_signal(np.zeros(11024))


def test_config_frame_count():
    with pytest.raises(TridentError):
        MfccConfig(hop=512)
    with pytest.raises(TridentError):
        MfccConfig(frame_length=2048)


def test_filterbank_matches_htk_triangles():
    np.testing.assert_allclose(mel_filterbank(), reference_mel_filterbank(), atol=1e-9)


def test_mfcc_of_silence():
    grid = mfcc_extract(np.zeros(11025))
    assert grid.shape == (40, 40)
    np.testing.assert_allclose(grid[:, 0], math.sqrt(40) * math.log(1e-10), rtol=1e-12)
    np.testing.assert_allclose(grid[:, 1:], 0.0, atol=1e-9)


def test_mfcc_matches_reference(rng):
    for _ in range(10):
        samples = rng.uniform(-1, 1, 11025)
        np.testing.assert_allclose(mfcc_extract(AudioSegment(samples)), reference_mfcc(samples), atol=1e-6)


def test_mfcc_tensor_shape(rng):
    tensor = mfcc_tensor(rng.uniform(-0.5, 0.5, 11025))
    assert tensor.shape == (1, 40, 40)
    assert tensor.dtype == np.float32
    assert tensor.reshape(-1).shape == (1600,)


def test_amplitude_scaling_adds_log_k_squared(rng):
    samples = 0.1 * rng.standard_normal(11025)
    base = log_mel_energies(samples)
    scaled = log_mel_energies(3.0 * samples)
    np.testing.assert_allclose(scaled - base, 2 * math.log(3.0), atol=1e-3)


def test_hop_shift_moves_frames(rng):
    samples = rng.uniform(-1, 1, 11025 + 256)
    first = frame_signal(samples[:11025])
    shifted = frame_signal(samples[256:11025 + 256])
    np.testing.assert_allclose(shifted[:-1], first[1:])


def test_deterministic(rng):
    samples = rng.uniform(-1, 1, 11025)
    assert np.array_equal(mfcc_extract(samples), mfcc_extract(samples.copy()))


def test_wav_round_trip(tmp_path, rng):
    samples = np.round(rng.uniform(-0.9, 0.9, 3 * 11025 + 100) * 32767) / 32767
    path = str(tmp_path / 'a.wav')
    save_wav(path, samples)
    loaded = load_wav(path)
    np.testing.assert_allclose(loaded, samples, atol=1e-9)
    segments = segment_audio(loaded)
    assert len(segments) == 3
    assert all(s.samples.shape == (11025,) for s in segments)


def test_wav_wrong_rate(tmp_path):
    from scipy.io import wavfile
    path = str(tmp_path / 'b.wav')
    wavfile.write(path, 16000, np.zeros(1000, dtype=np.int16))
    with pytest.raises(TridentError, match='16000'):
        load_wav(path)


def test_default_config():
    assert DEFAULT_MFCC.n_frames == 40


def test_wav_round_trip_keeps_amplitude(tmp_path):
    samples = np.array([1.0, -1.0, 0.5, -0.25, 1 / 32767, 0.0] * 10)
    path = str(tmp_path / 'scale.wav')
    save_wav(path, samples)
    loaded = load_wav(path)
    np.testing.assert_allclose(loaded, samples, atol=1 / 32767)
    assert loaded.max() == 1.0 and loaded.min() == -1.0
    from scipy.io import wavfile
    wavfile.write(path, 44100, np.array([-32768, 32767], dtype=np.int16))
    assert load_wav(path).tolist() == [-1.0, 1.0]
