"""
Test-time degradation of all three modalities, the similarity metrics that
quantify it (MCD for audio, SSIM for frames, SNR for I/Q) and the scenario
calibration that picks one intensity per modality to hit a preset's
targets.

Every op draws the same random numbers whatever its parameters are, so
for a fixed generator stream the degraded output is a continuous function
of the intensity scalar. Calibration depends on that.
"""
import dataclasses
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import librosa
import numpy as np
import scipy.ndimage
import scipy.signal
from overrides import overrides

from luna import Aggregator, derive_rng, ram_inc
from luna.registry import lookup, setup_registry
from trident.audio_features import mfcc_extract
from trident.core_types import AUDIO_RATE, AudioSegment, MultiModalSample
from trident.errors import CalibrationError, ConfigurationError, ShapeError, TridentError
from trident.rf_features import IqSegment, stft_spectrogram
from trident.video_features import load_frame_stack

logger = logging.getLogger(__name__)

register, AUGMENT_OPS = setup_registry('augment_ops')

MCD_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SPY_COUNTER = 'augment_calls'


@dataclasses.dataclass(frozen=True)
class ScenarioPreset:
    name: str
    target_mcd: float
    target_ssim: float
    target_snr: Tuple[float, float]


SCENARIO_PRESETS = {
    'low_noise': ScenarioPreset('low_noise', 3.54, 0.9597, (15.0, 20.0)),
    'high_noise': ScenarioPreset('high_noise', 11.82, 0.7271, (5.0, 10.0)),
}


def get_preset(name) -> ScenarioPreset:
    if name not in SCENARIO_PRESETS:
        raise ConfigurationError(f"unknown scenario '{name}', choose from {sorted(SCENARIO_PRESETS)}")
    return SCENARIO_PRESETS[name]


class AugmentOp:
    modality = ''
    # parameter -> (low, high, default)
    ranges: Dict[str, Tuple[float, float, float]] = {}

    def __init__(self, **params):
        name = type(self).op_name()
        for key in params:
            if key not in self.ranges:
                raise TridentError(f"{name} has no parameter '{key}', expected {sorted(self.ranges)}")
        self.params = {}
        for key, (low, high, default) in self.ranges.items():
            value = float(params.get(key, default))
            if not low <= value <= high:
                raise TridentError(f'{name} {key}={value:g} outside [{low:g}, {high:g}]')
            self.params[key] = value

    @classmethod
    def op_name(cls):
        for key, value in AUGMENT_OPS.items():
            if value is cls:
                return key
        return cls.__name__

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class AudioOp(AugmentOp):
    modality = 'audio'


class VisualOp(AugmentOp):
    modality = 'visual'


@register('background_noise')
class BackgroundNoise(AudioOp):
    ranges = {'gain': (0.0, 1.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        noise = rng.standard_normal(x.shape)
        return x + self.params['gain'] * noise


@register('harmonic_distortion')
class HarmonicDistortion(AudioOp):
    ranges = {'amount': (0.0, 1.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        # soft clipping blended with the clean signal
        shaped = np.tanh(5.0 * x) / np.tanh(5.0)
        return x + self.params['amount'] * (shaped - x)


@register('pitch_shift')
class PitchShift(AudioOp):
    ranges = {'semitones': (-12.0, 12.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        if self.params['semitones'] == 0:
            return x
        shifted = librosa.effects.pitch_shift(x, sr=AUDIO_RATE, n_steps=self.params['semitones'])
        return librosa.util.fix_length(shifted, size=len(x))


@register('clicks')
class Clicks(AudioOp):
    ranges = {'rate': (0.0, 400.0, 20.0), 'amplitude': (0.0, 1.0, 0.0)}
    click_length = 64

    @overrides
    def __call__(self, x, rng):
        count = rng.poisson(self.params['rate'] * len(x) / AUDIO_RATE)
        positions = rng.integers(0, len(x) - self.click_length, size=count)
        signs = rng.choice([-1.0, 1.0], size=count)
        shape = np.exp(-np.arange(self.click_length) / 8.0)
        out = x.copy()
        for pos, sign in zip(positions, signs):
            out[pos:pos + self.click_length] += sign * self.params['amplitude'] * shape
        return out


@register('mono_conversion')
class MonoConversion(AudioOp):

    @overrides
    def __call__(self, x, rng):
        if x.ndim == 1:
            return x
        return x.mean(axis=0)


@register('volume_scaling')
class VolumeScaling(AudioOp):
    ranges = {'factor': (0.0, 4.0, 1.0)}

    @overrides
    def __call__(self, x, rng):
        return x * self.params['factor']


@register('random_noise')
class RandomNoise(VisualOp):
    ranges = {'sigma': (0.0, 1.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        noise = rng.standard_normal(x.shape)
        return x + self.params['sigma'] * noise


@register('horizontal_flip')
class HorizontalFlip(VisualOp):

    @overrides
    def __call__(self, x, rng):
        return x[..., ::-1]


@register('rotation')
class Rotation(VisualOp):
    ranges = {'degrees': (-180.0, 180.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        sign = rng.choice([-1.0, 1.0])
        angle = sign * self.params['degrees']
        if angle == 0:
            return x
        # one angle for every frame of the stack
        return scipy.ndimage.rotate(x, angle, axes=(-1, -2), reshape=False, order=1, mode='reflect')


@register('color_jitter')
class ColorJitter(VisualOp):
    ranges = {'brightness': (0.0, 1.0, 0.0), 'contrast': (0.0, 1.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        u_brightness, u_contrast = rng.uniform(-1.0, 1.0, size=2)
        brightness = 1.0 + self.params['brightness'] * u_brightness
        contrast = 1.0 + self.params['contrast'] * u_contrast
        if brightness == 1.0 and contrast == 1.0:
            return x
        x = x * brightness
        mean = x.mean(axis=(-3, -2, -1), keepdims=True)
        return mean + contrast * (x - mean)


@register('gaussian_blur')
class GaussianBlur(VisualOp):
    ranges = {'sigma': (0.0, 5.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        if self.params['sigma'] == 0:
            return x
        sigma = [0.0] * (x.ndim - 2) + [self.params['sigma']] * 2
        return scipy.ndimage.gaussian_filter(x, sigma=sigma, mode='reflect')


@register('salt_pepper')
class SaltPepper(VisualOp):
    ranges = {'p': (0.0, 1.0, 0.0)}

    @overrides
    def __call__(self, x, rng):
        # one draw per pixel position, shared by its colour channels
        u = rng.random(x.shape[:-3] + (1,) + x.shape[-2:])
        p = self.params['p']
        salt = np.broadcast_to(u < p / 2, x.shape)
        pepper = np.broadcast_to((u >= p / 2) & (u < p), x.shape)
        out = x.copy()
        out[salt] = 1.0
        out[pepper] = 0.0
        return out


@dataclasses.dataclass
class OpSpec:
    name: str
    params: Dict[str, float] = dataclasses.field(default_factory=dict)

    def build(self, modality) -> AugmentOp:
        try:
            op_cls = lookup('augment_ops', self.name)
        except KeyError:
            raise TridentError(f"unknown augmentation op '{self.name}'") from None
        if op_cls.modality != modality:
            raise TridentError(f"'{self.name}' is a {op_cls.modality} op, not a {modality} op")
        return op_cls(**self.params)


@dataclasses.dataclass
class AugmentationConfig:
    audio_ops: List[OpSpec] = dataclasses.field(default_factory=list)
    visual_ops: List[OpSpec] = dataclasses.field(default_factory=list)
    rf_snr_db: Optional[Tuple[float, float]] = None
    noise_source: str = 'itw'
    seed: int = 0
    scenario: str = ''
    calibration: Dict[str, float] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.audio_ops = [s if isinstance(s, OpSpec) else OpSpec(**s) for s in self.audio_ops]
        self.visual_ops = [s if isinstance(s, OpSpec) else OpSpec(**s) for s in self.visual_ops]
        if self.rf_snr_db is not None:
            low, high = self.rf_snr_db
            if low > high:
                raise TridentError(f'rf_snr_db range {self.rf_snr_db} is reversed')
            self.rf_snr_db = (float(low), float(high))
        if self.noise_source != 'itw':
            raise TridentError(f"unknown noise source '{self.noise_source}'")
        # fail early on unknown names and out-of-range parameters
        self.build_audio()
        self.build_visual()

    def build_audio(self) -> List[AugmentOp]:
        return [s.build('audio') for s in self.audio_ops]

    def build_visual(self) -> List[AugmentOp]:
        return [s.build('visual') for s in self.visual_ops]

    def to_dict(self):
        return {
            'scenario': self.scenario,
            'seed': self.seed,
            'noise_source': self.noise_source,
            'rf_snr_db': list(self.rf_snr_db) if self.rf_snr_db is not None else None,
            'audio_ops': [dataclasses.asdict(s) for s in self.audio_ops],
            'visual_ops': [dataclasses.asdict(s) for s in self.visual_ops],
            'calibration': dict(self.calibration),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get('rf_snr_db') is not None:
            d['rf_snr_db'] = tuple(d['rf_snr_db'])
        return cls(**d)


def preset_audio_ops(intensity) -> List[OpSpec]:
    """
    The audio chain a scenario scales with one scalar in [0, 1]. Pitch
    shifting stays out of calibrated chains: its resampling is not
    continuous around zero semitones.
    """
    s = float(np.clip(intensity, 0.0, 1.0))
    return [OpSpec('mono_conversion'),
            OpSpec('background_noise', {'gain': 0.25 * s}),
            OpSpec('harmonic_distortion', {'amount': s}),
            OpSpec('clicks', {'rate': 40.0, 'amplitude': 0.5 * s}),
            OpSpec('volume_scaling', {'factor': 1.0 - 0.3 * s})]


def preset_visual_ops(intensity) -> List[OpSpec]:
    """The visual chain of a scenario; flipping has no intensity and is left out."""
    s = float(np.clip(intensity, 0.0, 1.0))
    return [OpSpec('color_jitter', {'brightness': 0.3 * s, 'contrast': 0.3 * s}),
            OpSpec('rotation', {'degrees': 10.0 * s}),
            OpSpec('gaussian_blur', {'sigma': 1.5 * s}),
            OpSpec('random_noise', {'sigma': 0.12 * s}),
            OpSpec('salt_pepper', {'p': 0.05 * s})]


def scenario_config(audio_intensity, visual_intensity, snr_range=None, seed=0, scenario=''):
    return AugmentationConfig(audio_ops=preset_audio_ops(audio_intensity),
                              visual_ops=preset_visual_ops(visual_intensity),
                              rf_snr_db=snr_range, seed=seed, scenario=scenario,
                              calibration={'audio_intensity': float(audio_intensity),
                                           'visual_intensity': float(visual_intensity)})


def _apply_audio(samples, ops, rng):
    x = np.asarray(samples, dtype=np.float64)
    for op in ops:
        x = op(x, rng)
    return np.clip(x, -1.0, 1.0)


def _apply_visual(stack, ops, rng):
    x = np.asarray(stack, dtype=np.float64)
    for op in ops:
        x = op(x, rng)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def augment_audio(segment: AudioSegment, cfg: AugmentationConfig, rng) -> AudioSegment:
    ram_inc(SPY_COUNTER)
    return AudioSegment(_apply_audio(segment.samples, cfg.build_audio(), rng), segment.sample_rate)


def augment_visual(stack: np.ndarray, cfg: AugmentationConfig, rng) -> np.ndarray:
    ram_inc(SPY_COUNTER)
    return _apply_visual(stack, cfg.build_visual(), rng)


def signal_power(x) -> float:
    x = x.samples if isinstance(x, IqSegment) else np.asarray(x)
    if x.size == 0:
        raise TridentError('cannot take the power of an empty signal')
    return float(np.mean(np.abs(x) ** 2))


def compute_snr(signal, noise) -> float:
    p_signal = signal_power(signal)
    p_noise = signal_power(noise)
    if p_noise <= 0:
        raise TridentError('noise power is zero')
    if p_signal <= 0:
        return -math.inf
    return 10.0 * math.log10(p_signal / p_noise)


def noise_scale(signal, noise, target_snr) -> float:
    p_signal = signal_power(signal)
    p_noise = signal_power(noise)
    if p_noise <= 0:
        raise TridentError('noise power is zero')
    if p_signal <= 0:
        raise TridentError('signal power is zero')
    return math.sqrt(p_signal / (p_noise * 10.0 ** (target_snr / 10.0)))


def augment_rf(segment: IqSegment, noise: IqSegment, target_snr, rng) -> IqSegment:
    """signal + alpha * noise, alpha set so the mixed-in noise sits target_snr dB below the signal."""
    if len(segment.samples) != len(noise.samples):
        raise ShapeError(segment.samples.shape, noise.samples.shape, what='noise segment')
    ram_inc(SPY_COUNTER)
    alpha = noise_scale(segment, noise, target_snr)
    # a random circular offset keeps one noise recording from lining up identically everywhere
    shifted = np.roll(noise.samples, int(rng.integers(0, len(noise.samples))))
    return IqSegment(segment.samples + alpha * shifted, segment.sample_rate)


def itw_noise(length, sample_rate, rng) -> np.ndarray:
    """
    Band-limited interference: filtered complex noise at a random offset,
    gated into bursts over a weak floor.
    """
    white = rng.standard_normal(length) + 1j * rng.standard_normal(length)
    sos = scipy.signal.butter(6, 0.15, output='sos')
    band = scipy.signal.sosfilt(sos, white.real) + 1j * scipy.signal.sosfilt(sos, white.imag)
    offset = rng.uniform(-0.3, 0.3)
    band = band * np.exp(2j * np.pi * offset * np.arange(length))
    envelope = np.full(length, 0.2)
    for _ in range(int(rng.integers(3, 9))):
        start = int(rng.integers(0, length))
        width = int(rng.integers(length // 50 + 1, length // 8 + 2))
        envelope[start:start + width] = 1.0
    return band * envelope


def augment_sample(sample: MultiModalSample, cfg: AugmentationConfig) -> MultiModalSample:
    """
    Degrades all modalities of one sample. The streams are derived from
    (cfg.seed, sample_id), so the same sample is always degraded the same
    way regardless of evaluation order. A lazily read sample has its frame
    stack loaded here.
    """
    audio = augment_audio(sample.audio, cfg, derive_rng(cfg.seed, sample.sample_id, 'audio'))
    stack = sample.video
    if stack is None:
        if sample.frames is None:
            raise TridentError(f'{sample.sample_id}: visual degradation needs the frame stack')
        stack = load_frame_stack(*sample.frames)
    video = augment_visual(stack, cfg, derive_rng(cfg.seed, sample.sample_id, 'visual'))
    iq, rf = sample.iq, sample.rf
    if cfg.rf_snr_db is not None:
        if iq is None:
            raise TridentError(f'{sample.sample_id}: RF degradation needs the raw I/Q segment')
        rng = derive_rng(cfg.seed, sample.sample_id, 'rf')
        target = rng.uniform(*cfg.rf_snr_db)
        noise = IqSegment(itw_noise(len(iq.samples), iq.sample_rate, rng), iq.sample_rate)
        iq = augment_rf(iq, noise, target, rng)
        rf = stft_spectrogram(iq)
    return dataclasses.replace(sample, audio=audio, video=video, iq=iq, rf=rf)


def compute_mcd(real: np.ndarray, aug: np.ndarray) -> float:
    real = np.asarray(real, dtype=np.float64)
    aug = np.asarray(aug, dtype=np.float64)
    if real.shape != aug.shape or real.ndim != 2:
        raise ShapeError(real.shape, aug.shape, what='MFCC grid')
    per_frame = np.sqrt(np.sum((real - aug) ** 2, axis=1))
    return float(MCD_CONSTANT * per_frame.mean())


def _luminance_frames(x: np.ndarray) -> np.ndarray:
    # (H, W) -> 1 frame, (C, H, W) -> 1 frame, (N, C, H, W) -> N frames
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x.mean(axis=0)[None]
    if x.ndim == 4:
        return x.mean(axis=1)
    raise TridentError(f'SSIM takes 2-4 dimensional images, got {x.ndim}')


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Local SSIM over every valid 8x8 window of two single-channel images."""
    kernel = np.full((SSIM_WINDOW, SSIM_WINDOW), 1.0 / SSIM_WINDOW ** 2)

    def local(a):
        return scipy.signal.convolve2d(a, kernel, mode='valid')

    mu_x, mu_y = local(x), local(y)
    var_x = local(x * x) - mu_x ** 2
    var_y = local(y * y) - mu_y ** 2
    cov = local(x * y) - mu_x * mu_y
    return ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
            / ((mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)))


def compute_ssim(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(x.shape, y.shape, what='image')
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError((SSIM_WINDOW, SSIM_WINDOW), x.shape[-2:], what='image')
    frames = [ssim_map(a, b) for a, b in zip(_luminance_frames(x), _luminance_frames(y))]
    return float(np.mean(frames))


def _bisect(measure: Callable[[float], float], target, tolerance, increasing, what, iterations=30):
    """
    Finds an intensity in [0, 1] whose measure is within tolerance of the
    target, assuming the measure is monotone in the intensity.
    """
    high_value = measure(1.0)
    reachable = high_value >= target if increasing else high_value <= target
    if not reachable:
        raise CalibrationError(f'{what} target {target} is out of reach, full intensity '
                               f'achieves {high_value:.4f}', achieved=high_value)
    low, high = 0.0, 1.0
    best_s, best_value = 1.0, high_value
    for _ in range(iterations):
        mid = (low + high) / 2
        value = measure(mid)
        if abs(value - target) < abs(best_value - target):
            best_s, best_value = mid, value
        if (value < target) == increasing:
            low = mid
        else:
            high = mid
    if abs(best_value - target) > tolerance:
        raise CalibrationError(f'{what} calibration stalled at {best_value:.4f}, '
                               f'target {target}±{tolerance}', achieved=best_value)
    return best_s, best_value


def calibrate_scenario(preset: ScenarioPreset,
                       probe_samples: Sequence[MultiModalSample],
                       seed=0,
                       mcd_tolerance=0.5,
                       ssim_tolerance=0.02) -> AugmentationConfig:
    if len(probe_samples) < 20:
        raise TridentError(f'calibration needs at least 20 probe samples, got {len(probe_samples)}')

    real_mfcc = [mfcc_extract(p.audio) for p in probe_samples]

    def audio_values(s):
        ops = AugmentationConfig(audio_ops=preset_audio_ops(s)).build_audio()
        return [compute_mcd(real, mfcc_extract(_apply_audio(p.audio.samples, ops,
                                                            derive_rng(seed, p.sample_id, 'audio'))))
                for p, real in zip(probe_samples, real_mfcc)]

    def visual_values(s):
        ops = AugmentationConfig(visual_ops=preset_visual_ops(s)).build_visual()
        return [compute_ssim(p.video, _apply_visual(p.video, ops, derive_rng(seed, p.sample_id, 'visual')))
                for p in probe_samples]

    audio_s, mcd = _bisect(lambda s: float(np.mean(audio_values(s))), preset.target_mcd,
                           mcd_tolerance, increasing=True, what='MCD')
    visual_s, ssim = _bisect(lambda s: float(np.mean(visual_values(s))), preset.target_ssim,
                             ssim_tolerance, increasing=False, what='SSIM')

    dispersion = Aggregator()
    dispersion.aggregate(('mcd', audio_values(audio_s)), ('ssim', visual_values(visual_s)))
    cfg = scenario_config(audio_s, visual_s, preset.target_snr, seed=seed, scenario=preset.name)
    cfg.calibration.update({
        'mcd_mean': mcd, 'mcd_std': float(dispersion.std('mcd')),
        'ssim_mean': ssim, 'ssim_std': float(dispersion.std('ssim')),
        'probes': len(probe_samples),
    })
    logger.info('Calibrated %s: audio intensity %.4f (MCD %.3f dB), visual intensity %.4f (SSIM %.4f)',
                preset.name, audio_s, mcd, visual_s, ssim)
    return cfg
