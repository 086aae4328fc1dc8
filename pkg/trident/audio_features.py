import dataclasses
import functools
import logging
from typing import List, Union

import librosa
import numpy as np
import scipy.fft
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from trident.core_types import AUDIO_RATE, AUDIO_SEGMENT_LENGTH, AudioSegment
from trident.errors import ShapeError, TridentError

logger = logging.getLogger(__name__)

# full scale of 16-bit PCM in both directions
PCM_SCALE = 32767.0


@dataclasses.dataclass(frozen=True)
class MfccConfig:
    frame_length: int = 1024
    hop: int = 256
    fft_size: int = 1024
    mel_filters: int = 40
    coefficients: int = 40
    log_floor: float = 1e-10
    window: str = 'hann'

    def __post_init__(self):
        if self.frame_length > self.fft_size:
            raise TridentError(f'frame_length {self.frame_length} exceeds fft_size {self.fft_size}')
        if self.coefficients > self.mel_filters:
            raise TridentError('cannot keep more cepstral coefficients than mel filters')
        if self.n_frames != 40:
            raise TridentError(f'frame_length {self.frame_length} / hop {self.hop} gives '
                               f'{self.n_frames} frames per segment, expected 40')

    @property
    def n_frames(self):
        return 1 + (AUDIO_SEGMENT_LENGTH - self.frame_length) // self.hop


DEFAULT_MFCC = MfccConfig()


def load_wav(path) -> np.ndarray:
    """Mono 16-bit or float PCM at 44.1 kHz, returned as float64 in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as e:
        raise TridentError(f'cannot read audio file {path}: {e}') from None
    if rate != AUDIO_RATE:
        raise TridentError(f'{path}: sample rate {rate} Hz is not supported, expected {AUDIO_RATE} Hz')
    if data.ndim != 1:
        raise TridentError(f'{path}: expected mono audio, got {data.shape[1]} channels')
    if data.dtype == np.int16:
        return np.clip(data.astype(np.float64) / PCM_SCALE, -1.0, 1.0)
    if data.dtype in (np.float32, np.float64):
        return np.clip(data.astype(np.float64), -1.0, 1.0)
    raise TridentError(f'{path}: unsupported sample format {data.dtype}')


def save_wav(path, samples: np.ndarray):
    pcm = np.round(np.clip(samples, -1.0, 1.0) * PCM_SCALE).astype(np.int16)
    wavfile.write(path, AUDIO_RATE, pcm)


def segment_audio(samples: np.ndarray) -> List[AudioSegment]:
    """Consecutive non-overlapping 0.25 s segments; the trailing remainder is dropped."""
    n = len(samples) // AUDIO_SEGMENT_LENGTH
    return [AudioSegment(samples[k * AUDIO_SEGMENT_LENGTH:(k + 1) * AUDIO_SEGMENT_LENGTH])
            for k in range(n)]


def _samples_of(segment: Union[AudioSegment, np.ndarray]) -> np.ndarray:
    samples = segment.samples if isinstance(segment, AudioSegment) else np.asarray(segment, dtype=np.float64)
    if samples.shape != (AUDIO_SEGMENT_LENGTH,):
        raise ShapeError((AUDIO_SEGMENT_LENGTH,), samples.shape, what='audio segment')
    return samples


@functools.lru_cache(maxsize=8)
def _window(name, length):
    # fftbins=True gives the periodic form
    return scipy.signal.get_window(name, length, fftbins=True)


@functools.lru_cache(maxsize=8)
def mel_filterbank(fft_size=1024, mel_filters=40, sample_rate=AUDIO_RATE) -> np.ndarray:
    """(mel_filters, fft_size // 2 + 1) triangular HTK-scale filters, peak 1, 0 Hz to Nyquist."""
    return librosa.filters.mel(sr=sample_rate, n_fft=fft_size, n_mels=mel_filters,
                               fmin=0.0, fmax=sample_rate / 2, htk=True, norm=None,
                               dtype=np.float64)


def frame_signal(segment, cfg: MfccConfig = DEFAULT_MFCC) -> np.ndarray:
    samples = _samples_of(segment)
    frames = sliding_window_view(samples, cfg.frame_length)[::cfg.hop][:cfg.n_frames]
    return frames * _window(cfg.window, cfg.frame_length)


def log_mel_energies(segment, cfg: MfccConfig = DEFAULT_MFCC) -> np.ndarray:
    frames = frame_signal(segment, cfg)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg.fft_size, cfg.mel_filters).T
    return np.log(energies + cfg.log_floor)


def mfcc_extract(segment, cfg: MfccConfig = DEFAULT_MFCC) -> np.ndarray:
    """
    The (40, 40) MFCC grid of one segment, row = frame. Coefficient 0 is
    kept, so the grid holds coefficients 0..39.
    """
    log_mel = log_mel_energies(segment, cfg)
    return scipy.fft.dct(log_mel, type=2, norm='ortho', axis=1)[:, :cfg.coefficients]


def mfcc_tensor(segment, cfg: MfccConfig = DEFAULT_MFCC) -> np.ndarray:
    """Model-ready (1, 40, 40) float32 grid."""
    return mfcc_extract(segment, cfg)[None].astype(np.float32)
