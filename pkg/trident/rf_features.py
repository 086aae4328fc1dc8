import dataclasses
import functools
import logging
from typing import List, Union

import numpy as np
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

from trident.core_types import IMAGE_SIZE, SEGMENT_SECONDS
from trident.errors import ShapeError, TridentError
from trident.imaging import resize_bilinear, to_uint8, write_png

logger = logging.getLogger(__name__)

DATASET_IQ_RATE = 55e6
SYNTH_IQ_RATE = 1e6
DB_FLOOR = 1e-12


def segment_length(sample_rate) -> int:
    return int(round(sample_rate * SEGMENT_SECONDS))


@dataclasses.dataclass(frozen=True, eq=False)
class IqSegment:
    samples: np.ndarray
    sample_rate: float = SYNTH_IQ_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        expected = segment_length(self.sample_rate)
        if samples.shape != (expected,):
            raise ShapeError((expected,), samples.shape, what='I/Q segment')
        if not np.all(np.isfinite(samples)):
            raise TridentError('I/Q samples must be finite')
        object.__setattr__(self, 'samples', samples)

    @property
    def power(self):
        return float(np.mean(np.abs(self.samples) ** 2))


def load_iq(path, sample_rate=SYNTH_IQ_RATE) -> List[IqSegment]:
    """Interleaved little-endian float32 I/Q, cut into 0.25 s segments."""
    try:
        raw = np.fromfile(path, dtype='<f4')
    except OSError as e:
        raise TridentError(f'cannot read I/Q file {path}: {e}') from None
    if raw.size % 2:
        raise TridentError(f'unpaired I/Q: {path} holds an odd number of floats ({raw.size})')
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    n = segment_length(sample_rate)
    return [IqSegment(samples[k * n:(k + 1) * n], sample_rate)
            for k in range(len(samples) // n)]


def save_iq(path, samples: Union[np.ndarray, List[IqSegment]]):
    if isinstance(samples, list):
        samples = np.concatenate([s.samples for s in samples]) if samples else np.zeros(0, np.complex128)
    interleaved = np.empty(2 * len(samples), dtype='<f4')
    interleaved[0::2] = np.real(samples)
    interleaved[1::2] = np.imag(samples)
    interleaved.tofile(path)


@functools.lru_cache(maxsize=4)
def _hamming(length):
    return scipy.signal.get_window('hamming', length, fftbins=True)


def stft_matrix(samples, fft_size=1024, hop=None) -> np.ndarray:
    """
    Complex S(t, f), shape (frames, fft_size), frequency axis fft-shifted
    so column fft_size // 2 is 0 Hz.
    """
    samples = samples.samples if isinstance(samples, IqSegment) else np.asarray(samples)
    hop = hop or fft_size // 2
    if samples.ndim != 1 or len(samples) < fft_size:
        raise TridentError(f'segment of {len(samples)} samples is shorter than fft_size {fft_size}')
    frames = sliding_window_view(samples, fft_size)[::hop] * _hamming(fft_size)
    return np.fft.fftshift(np.fft.fft(frames, axis=1), axes=1)


def spectrogram_db(samples, fft_size=1024, hop=None) -> np.ndarray:
    """(frequency, time) magnitude image in dB."""
    return 20.0 * np.log10(np.abs(stft_matrix(samples, fft_size, hop)) + DB_FLOOR).T


def min_max(image: np.ndarray) -> np.ndarray:
    lo, hi = image.min(), image.max()
    if hi - lo <= 0:
        return np.zeros_like(image)
    return (image - lo) / (hi - lo)


def stft_spectrogram(segment, fft_size=1024, hop=None, size=IMAGE_SIZE) -> np.ndarray:
    """Model-ready (1, 3, size, size) float32 image in [0, 1]; height = frequency, width = time."""
    image = min_max(spectrogram_db(segment, fft_size, hop))
    resized = np.clip(resize_bilinear(image, size), 0.0, 1.0)
    return np.repeat(resized[None, None], 3, axis=1).astype(np.float32)


def export_spectrogram_png(spec: np.ndarray, path):
    """Writes channel 0 as grayscale with the highest frequency on the top row."""
    image = np.asarray(spec).reshape((-1,) + spec.shape[-2:])[0]
    write_png(path, to_uint8(image[::-1]))
