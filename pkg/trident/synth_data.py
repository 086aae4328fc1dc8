"""
Synthetic recordings with a controllable separation between the drone and
no-drone classes. Each recording is 40 segments of 0.25 s written in the
layout preprocessing consumes: a 44.1 kHz WAV, a directory of 224x224 PNG
frames at 30 fps with per-frame presence flags, an interleaved float32 I/Q
file, and one manifest row.

All three modalities of a recording follow the same per-frame presence
schedule. Drone recordings contain partially present segments, where the
drone is only in a strict subset of a stack's frames.
"""
import dataclasses
import logging
import math
import os
from typing import List, Tuple

import numpy as np
import scipy.ndimage
from sklearn.tree import DecisionTreeClassifier
from tqdm import tqdm

from luna import create_folder, derive_rng
from trident.audio_features import load_wav, mfcc_extract, save_wav, segment_audio
from trident.core_types import (AUDIO_RATE, AUDIO_SEGMENT_LENGTH, FRAMES_PER_STACK, SEGMENT_SECONDS,
                                SEGMENTS_PER_RECORDING, VIDEO_FPS, Lighting, LineOfSight, Location, ManifestEntry,
                                PresenceFlag, Split, label_from_frames, split_dataset, write_manifest)
from trident.errors import ConfigurationError, TridentError
from trident.imaging import to_uint8, write_png
from trident.rf_features import SYNTH_IQ_RATE, save_iq, segment_length
from trident.video_features import (frame_path, list_frames, load_frame_labels, segment_to_stacks,
                                    write_frame_labels)

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.tsv'


@dataclasses.dataclass
class SynthConfig:
    n_files: int = 10
    segments_per_file: int = SEGMENTS_PER_RECORDING
    difficulty: float = 0.5
    class_balance: float = 0.5
    daylight_fraction: float = 0.5
    urban_fraction: float = 0.5
    los_fraction: float = 0.5
    partial_fraction: float = 0.2
    iq_rate: float = SYNTH_IQ_RATE
    frame_size: int = 224
    split_ratios: Tuple[float, float, float] = (0.77, 0.11, 0.12)
    seed: int = 0
    # admits recordings shorter than 10 s, for quick runs
    short_clips: bool = False

    def __post_init__(self):
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        if self.n_files < 1:
            raise ConfigurationError('n_files must be positive')
        check_segments_per_file(self.segments_per_file, self.short_clips)
        for name in ('difficulty', 'class_balance', 'daylight_fraction', 'urban_fraction',
                     'los_fraction', 'partial_fraction'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f'{name}={value} outside [0, 1]')
        if self.iq_rate * SEGMENT_SECONDS < 1024:
            raise ConfigurationError(f'iq_rate {self.iq_rate} leaves fewer than 1024 I/Q samples per segment')

    @property
    def total_frames(self):
        # the last stack must fit: its start is floor((S - 1) * 7.5 + 0.5)
        step = VIDEO_FPS * SEGMENT_SECONDS
        return math.floor((self.segments_per_file - 1) * step + 0.5) + FRAMES_PER_STACK


def check_segments_per_file(segments, short_clips=False, name='segments_per_file'):
    if segments == SEGMENTS_PER_RECORDING:
        return
    if not short_clips:
        raise ConfigurationError(f'{name}={segments}: a recording is {SEGMENTS_PER_RECORDING} segments of '
                                 f'{SEGMENT_SECONDS} s, shorter clips need short_clips')
    if not 1 <= segments < SEGMENTS_PER_RECORDING:
        raise ConfigurationError(f'{name}={segments} outside [1, {SEGMENTS_PER_RECORDING}]')


def presence_schedule(segments: int, rng, partial_fraction=0.2) -> np.ndarray:
    """
    (segments, 7) presence flags of a drone recording. A partial segment
    has the drone entering or leaving the view, so only a strict, contiguous
    subset of its frames is flagged.
    """
    if segments <= 0:
        raise TridentError('a schedule needs at least one segment')
    schedule = np.ones((segments, FRAMES_PER_STACK), dtype=np.int64)
    for k in range(segments):
        if rng.random() < partial_fraction:
            cut = int(rng.integers(1, FRAMES_PER_STACK))
            if rng.random() < 0.5:
                schedule[k, :cut] = 0
            else:
                schedule[k, cut:] = 0
    return schedule


def frame_flags(schedule: np.ndarray, total_frames) -> np.ndarray:
    """Expands a stack schedule to every frame; frames between stacks repeat their predecessor."""
    flags = np.zeros(total_frames, dtype=np.int64)
    covered = np.zeros(total_frames, dtype=bool)
    for start, row in zip(segment_to_stacks(total_frames), schedule):
        flags[start:start + FRAMES_PER_STACK] = row
        covered[start:start + FRAMES_PER_STACK] = True
    for i in range(1, total_frames):
        if not covered[i]:
            flags[i] = flags[i - 1]
    return flags


def envelope(flags: np.ndarray, sample_index: np.ndarray, sample_rate) -> np.ndarray:
    """Presence at the given sample positions of a signal sampled at `sample_rate`."""
    index = np.minimum((sample_index * VIDEO_FPS // sample_rate).astype(np.int64), len(flags) - 1)
    return flags[index].astype(np.float64)


def pink_noise(length, rng) -> np.ndarray:
    """1/f noise with unit RMS."""
    spectrum = np.fft.rfft(rng.standard_normal(length))
    freqs = np.arange(spectrum.shape[0])
    spectrum = spectrum / np.sqrt(np.maximum(freqs, 1))
    noise = np.fft.irfft(spectrum, n=length)
    return noise / (np.sqrt(np.mean(noise ** 2)) + 1e-12)


def _rms(x, level):
    return x * (level / (np.sqrt(np.mean(x ** 2)) + 1e-12))


def synth_audio(flags, present: bool, difficulty, segments, rng) -> np.ndarray:
    length = segments * AUDIO_SEGMENT_LENGTH
    t = np.arange(length) / AUDIO_RATE
    noise_level = (0.005 + 0.15 * difficulty) * rng.uniform(1 - 0.5 * difficulty, 1 + 0.5 * difficulty)
    audio = _rms(pink_noise(length, rng), noise_level)
    if present:
        f0 = rng.uniform(180.0, 220.0)
        # slow rotor speed drift
        phase = 2 * np.pi * np.cumsum(f0 * (1 + 0.01 * np.sin(2 * np.pi * 0.3 * t))) / AUDIO_RATE
        comb = sum(np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 7))
        audio = audio + _rms(comb, 0.2 * (1 - 0.85 * difficulty)) * envelope(flags, np.arange(length), AUDIO_RATE)
    # tonal distractors: birds, horns, engines
    segment = AUDIO_SEGMENT_LENGTH
    for start in range(0, length - segment + 1, segment):
        if rng.random() < 0.3 + 0.4 * difficulty:
            tone = np.sin(2 * np.pi * rng.uniform(300.0, 3000.0) * t[start:start + segment])
            audio[start:start + segment] += _rms(tone, 0.2 * difficulty) * np.hanning(segment)
    peak = np.abs(audio).max()
    return audio / peak * 0.95 if peak > 0.95 else audio


def _blob(size, cx, cy, rx, ry):
    y, x = np.ogrid[:size, :size]
    return (((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0).astype(np.float64)


def _background(size, lighting, location, rng) -> np.ndarray:
    """(3, size, size) sky with a static texture, city blocks for urban scenes."""
    rows = np.linspace(0.0, 1.0, size)[:, None]
    if lighting == Lighting.DAYLIGHT:
        top, bottom = np.array([0.45, 0.65, 0.95]), np.array([0.75, 0.85, 0.95])
    else:
        top, bottom = np.array([0.25, 0.2, 0.4]), np.array([0.9, 0.5, 0.25])
    sky = top[:, None, None] * (1 - rows) + bottom[:, None, None] * rows
    sky = np.broadcast_to(sky, (3, size, size)).copy()
    texture = scipy.ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=4)
    sky += 0.08 * texture / (np.abs(texture).max() + 1e-12)
    if location == Location.URBAN:
        x = 0
        while x < size:
            width = int(rng.integers(size // 12, size // 5))
            height = int(rng.integers(size // 8, size // 3))
            sky[:, size - height:, x:x + width] = rng.uniform(0.15, 0.35)
            x += width + int(rng.integers(0, size // 20 + 1))
    else:
        sky[:, size - size // 10:, :] = np.array([0.2, 0.4, 0.15])[:, None, None]
    return np.clip(sky, 0.0, 1.0)


def synth_frames(flags, present: bool, tags, difficulty, size, rng):
    """Yields (3, size, size) frames in [0, 1]."""
    lighting, location, los = tags
    background = _background(size, lighting, location, rng)
    contrast = 0.8 * (1 - 0.7 * difficulty) * (0.6 if los == LineOfSight.NLOS else 1.0)
    position = rng.uniform(0.2 * size, 0.6 * size, size=2)
    velocity = rng.uniform(-1.5, 1.5, size=2) * size / 224
    birds = [(rng.uniform(0, size, 2), rng.uniform(-2, 2, 2) * size / 224)
             for _ in range(int(rng.poisson(1 + 3 * difficulty)))]
    cloud = rng.random() < 0.5
    cloud_center = rng.uniform(0, size, 2)
    for i, flag in enumerate(flags):
        frame = background.copy()
        if cloud:
            drift = cloud_center + np.array([0.3 * i, 0.0])
            soft = scipy.ndimage.gaussian_filter(_blob(size, drift[0] % size, drift[1], size / 5, size / 9), 6)
            frame += 0.25 * soft
        for start, step in birds:
            x, y = (start + i * step) % size
            mask = _blob(size, x, y, 3 * size / 224, 2 * size / 224)
            shade = -0.4 + 0.9 * difficulty
            frame += shade * mask
        if present and flag:
            position = position + velocity
            for axis in range(2):
                if not 0.1 * size < position[axis] < 0.8 * size:
                    velocity[axis] = -velocity[axis]
            mask = _blob(size, position[0], position[1], 6 * size / 224, 3 * size / 224)
            frame = frame * (1 - mask) + mask * np.clip(frame + contrast, 0.0, 1.0)
        frame += rng.normal(0.0, 0.01 + 0.03 * difficulty, frame.shape)
        yield np.clip(frame, 0.0, 1.0)


def synth_iq(flags, present: bool, los, difficulty, sample_rate, segments, rng):
    """Yields one complex segment at a time."""
    length = segment_length(sample_rate)
    noise_sigma = (0.05 + 0.9 * difficulty) / math.sqrt(2)
    period = rng.uniform(0.02, 0.04)
    burst = 0.3 * period
    offset = rng.uniform(0, period)
    carrier = rng.uniform(-0.3, 0.3)
    amplitude = 0.5 if los == LineOfSight.NLOS else 1.0
    samples_per_symbol = 64
    for k in range(segments):
        n = np.arange(k * length, (k + 1) * length)
        t = n / sample_rate
        x = noise_sigma * (rng.standard_normal(length) + 1j * rng.standard_normal(length))
        if present:
            gate = (((t - offset) % period) < burst).astype(np.float64)
            symbols = rng.choice([-1.0, 1.0], size=length // samples_per_symbol + 1)
            bpsk = np.repeat(symbols, samples_per_symbol)[:length]
            tone = np.exp(2j * np.pi * carrier * n)
            x += amplitude * gate * bpsk * tone * envelope(flags, n, sample_rate)
        for _ in range(int(rng.poisson(2.0))):
            start = int(rng.integers(0, length))
            width = int(rng.integers(length // 40 + 1, length // 10 + 2))
            sl = slice(start, start + width)
            size = len(x[sl])
            wideband = rng.standard_normal(size) + 1j * rng.standard_normal(size)
            if rng.random() < difficulty:
                # narrowband interferer that mimics a packet but keeps no period
                wideband = wideband * 0.3 + np.exp(2j * np.pi * rng.uniform(-0.3, 0.3) * np.arange(size))
            x[sl] += (0.3 + 0.5 * difficulty) * wideband
        yield x


def _tags(cfg: SynthConfig, rng):
    return (Lighting.DAYLIGHT if rng.random() < cfg.daylight_fraction else Lighting.SUNSET,
            Location.URBAN if rng.random() < cfg.urban_fraction else Location.NON_URBAN,
            LineOfSight.LOS if rng.random() < cfg.los_fraction else LineOfSight.NLOS)


def generate_recording(cfg: SynthConfig, index, label: PresenceFlag, out_dir) -> ManifestEntry:
    sample_id = f'rec_{index:04d}'
    rng = derive_rng(cfg.seed, 'file', index)
    tags = _tags(cfg, rng)
    present = label == PresenceFlag.PRESENT
    total_frames = cfg.total_frames
    if present:
        schedule = presence_schedule(cfg.segments_per_file, rng, cfg.partial_fraction)
    else:
        schedule = np.zeros((cfg.segments_per_file, FRAMES_PER_STACK), dtype=np.int64)
    flags = frame_flags(schedule, total_frames)

    audio_path = os.path.join(out_dir, 'audio', f'{sample_id}.wav')
    frames_dir = os.path.join(out_dir, 'frames', sample_id)
    iq_path = os.path.join(out_dir, 'iq', f'{sample_id}.iq')
    create_folder(os.path.dirname(audio_path))
    create_folder(frames_dir)
    create_folder(os.path.dirname(iq_path))

    audio = synth_audio(flags, present, cfg.difficulty, cfg.segments_per_file,
                        derive_rng(cfg.seed, 'audio', index))
    save_wav(audio_path, audio)

    frames = synth_frames(flags, present, tags, cfg.difficulty, cfg.frame_size,
                          derive_rng(cfg.seed, 'video', index))
    for i, frame in enumerate(frames):
        write_png(frame_path(frames_dir, i), to_uint8(frame.transpose(1, 2, 0)))
    write_frame_labels(frames_dir, flags)

    with open(iq_path, 'wb') as f:
        for segment in synth_iq(flags, present, tags[2], cfg.difficulty, cfg.iq_rate,
                                cfg.segments_per_file, derive_rng(cfg.seed, 'rf', index)):
            save_iq(f, segment)

    return ManifestEntry(sample_id=sample_id, audio_path=audio_path, frames_dir=frames_dir,
                         iq_path=iq_path, label=label, lighting=tags[0], location=tags[1],
                         los=tags[2], split=Split.TRAIN)


def generate_dataset(cfg: SynthConfig, out_dir) -> str:
    """Writes the recordings and a split manifest under `out_dir`; returns the manifest path."""
    try:
        create_folder(out_dir)
    except OSError as e:
        raise TridentError(f'cannot create output directory {out_dir}: {e}') from None
    if not os.path.isdir(out_dir):
        raise TridentError(f'output path {out_dir} is not a directory')
    if not os.access(out_dir, os.W_OK):
        raise TridentError(f'output directory {out_dir} is not writable')

    n_drone = int(round(cfg.class_balance * cfg.n_files))
    labels = [PresenceFlag.PRESENT] * n_drone + [PresenceFlag.ABSENT] * (cfg.n_files - n_drone)
    labels = [labels[i] for i in derive_rng(cfg.seed, 'labels').permutation(cfg.n_files)]

    entries = [generate_recording(cfg, i, label, out_dir)
               for i, label in enumerate(tqdm(labels, desc='synth-data'))]
    partition = split_dataset(entries, cfg.split_ratios, cfg.seed)
    by_id = {e.sample_id: e for split in partition.values() for e in split}
    entries = [by_id[e.sample_id] for e in entries]

    path = os.path.join(out_dir, MANIFEST_NAME)
    header = (f'synthetic recordings: seed={cfg.seed} difficulty={cfg.difficulty} '
              f'iq_rate={cfg.iq_rate:g} segments_per_file={cfg.segments_per_file}')
    write_manifest(entries, path, header=header)
    logger.info('Wrote %d recordings (%d drone) to %s', cfg.n_files, n_drone, out_dir)
    return path


def mfcc_energy_features(entries) -> Tuple[np.ndarray, np.ndarray]:
    """Mean of the zeroth cepstral coefficient per segment, with the segment labels."""
    features, labels = [], []
    for entry in entries:
        segments = segment_audio(load_wav(entry.audio_path))
        total = len(list_frames(entry.frames_dir))
        flags = load_frame_labels(entry.frames_dir, total, entry.label)
        for start, segment in zip(segment_to_stacks(total), segments):
            features.append(mfcc_extract(segment)[:, 0].mean())
            labels.append(int(label_from_frames(flags[start:start + FRAMES_PER_STACK])))
    return np.asarray(features)[:, None], np.asarray(labels)


def stump_accuracy(features: np.ndarray, labels: np.ndarray) -> float:
    """Train accuracy of a depth-2 decision tree; a separability probe."""
    tree = DecisionTreeClassifier(max_depth=2, random_state=0)
    tree.fit(features, labels)
    return float(tree.score(features, labels))


def partial_fraction(schedule: np.ndarray) -> float:
    present = schedule.sum(axis=1)
    return float(np.mean((present > 0) & (present < FRAMES_PER_STACK)))


def segment_labels(schedule: np.ndarray) -> List[PresenceFlag]:
    return [label_from_frames(row) for row in schedule]
