"""
Turns manifest recordings into synchronized 0.25 s samples.

A recording yields K = min(audio segments, video windows, I/Q segments)
samples. Preprocessing writes one cache directory per recording holding the
MFCC grids, the resized frame stacks as 8-bit codes, the RF spectrograms and
the raw audio segments, so training and evaluation never touch the source
files again. The raw I/Q is re-read only when a degradation scenario needs it.
"""
import dataclasses
import json
import logging
import os
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from luna import create_folder, derive_rng
from trident.audio_features import load_wav, mfcc_tensor, segment_audio
from trident.core_types import (FRAMES_PER_STACK, IMAGE_SIZE, AudioSegment, ManifestEntry,
                                MultiModalSample, PresenceFlag, Split, label_from_frames)
from trident.errors import ShapeError, TridentError
from trident.imaging import to_uint8
from trident.rf_features import SYNTH_IQ_RATE, load_iq, stft_spectrogram
from trident.video_features import list_frames, load_frame, load_frame_labels, segment_to_stacks

logger = logging.getLogger(__name__)

CACHE_VERSION = 1
_ARRAYS = ('audio', 'mfcc', 'frames', 'rf', 'labels', 'starts')


def segment_id(recording_id, k):
    return f'{recording_id}#{k:03d}'


def video_layout(stack: np.ndarray) -> np.ndarray:
    """(7, 3, H, W) frame stack -> (3, 7, H, W) model input."""
    stack = np.asarray(stack)
    if stack.shape != (FRAMES_PER_STACK, 3, IMAGE_SIZE, IMAGE_SIZE):
        raise ShapeError((FRAMES_PER_STACK, 3, IMAGE_SIZE, IMAGE_SIZE), stack.shape, what='frame stack')
    return np.ascontiguousarray(stack.transpose(1, 0, 2, 3))


def rf_layout(spec: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) spectrogram -> (3, 1, H, W) model input."""
    spec = np.asarray(spec)
    if spec.shape != (1, 3, IMAGE_SIZE, IMAGE_SIZE):
        raise ShapeError((1, 3, IMAGE_SIZE, IMAGE_SIZE), spec.shape, what='RF spectrogram')
    return np.ascontiguousarray(spec.transpose(1, 0, 2, 3))


@dataclasses.dataclass
class RecordingCache:
    entry: ManifestEntry
    audio: np.ndarray    # (K, 11025) float32
    mfcc: np.ndarray     # (K, 1, 40, 40) float32
    frames: np.ndarray   # (K, 7, 3, 112, 112) uint8
    rf: np.ndarray       # (K, 112, 112) float32
    labels: np.ndarray   # (K,) presence flags
    starts: np.ndarray   # (K,) first frame of each stack
    iq_rate: float = SYNTH_IQ_RATE

    def __len__(self):
        return int(self.labels.shape[0])

    def video(self, k) -> np.ndarray:
        return (np.asarray(self.frames[k], dtype=np.float32) / 255.0).astype(np.float32)

    def spectrogram(self, k) -> np.ndarray:
        return np.repeat(np.asarray(self.rf[k], dtype=np.float32)[None, None], 3, axis=1)


def preprocess_recording(entry: ManifestEntry, iq_rate=SYNTH_IQ_RATE) -> RecordingCache:
    audio_segments = segment_audio(load_wav(entry.audio_path))
    frame_files = list_frames(entry.frames_dir)
    starts = segment_to_stacks(len(frame_files))
    iq_segments = load_iq(entry.iq_path, iq_rate)
    k = min(len(audio_segments), len(starts), len(iq_segments))
    if k == 0:
        raise TridentError(f'{entry.sample_id}: recording is shorter than one 0.25 s segment')
    if len({len(audio_segments), len(starts), len(iq_segments)}) > 1:
        logger.warning('%s: modalities disagree on length (audio %d, video %d, rf %d), keeping %d',
                       entry.sample_id, len(audio_segments), len(starts), len(iq_segments), k)
    starts = starts[:k]
    flags = load_frame_labels(entry.frames_dir, len(frame_files), entry.label)

    decoded = {}
    frames = np.empty((k, FRAMES_PER_STACK, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    for i, start in enumerate(starts):
        for j in range(FRAMES_PER_STACK):
            index = start + j
            if index not in decoded:
                decoded[index] = to_uint8(load_frame(frame_files[index]))
            frames[i, j] = decoded[index]

    return RecordingCache(
        entry=entry,
        audio=np.stack([s.samples for s in audio_segments[:k]]).astype(np.float32),
        mfcc=np.stack([mfcc_tensor(s) for s in audio_segments[:k]]),
        frames=frames,
        rf=np.stack([stft_spectrogram(s)[0, 0] for s in iq_segments[:k]]),
        labels=np.array([int(label_from_frames(flags[s:s + FRAMES_PER_STACK])) for s in starts],
                        dtype=np.int64),
        starts=np.asarray(starts, dtype=np.int64),
        iq_rate=float(iq_rate),
    )


def cache_dir_of(cache_root, entry: ManifestEntry):
    return os.path.join(cache_root, entry.sample_id)


def save_cache(cache: RecordingCache, directory):
    create_folder(directory)
    for name in _ARRAYS:
        np.save(os.path.join(directory, f'{name}.npy'), getattr(cache, name))
    with open(os.path.join(directory, 'meta.json'), 'w', encoding='utf8') as f:
        json.dump({'version': CACHE_VERSION, 'sample_id': cache.entry.sample_id,
                   'iq_rate': cache.iq_rate, 'segments': len(cache)}, f, sort_keys=True)
    return directory


def _meta(directory):
    path = os.path.join(directory, 'meta.json')
    if not os.path.isfile(path):
        return None
    with open(path, 'r', encoding='utf8') as f:
        return json.load(f)


def load_cache(directory, entry: ManifestEntry) -> RecordingCache:
    meta = _meta(directory)
    if meta is None:
        raise TridentError(f'no preprocessed data for {entry.sample_id} in {directory}, '
                           f'run preprocess first')
    if meta.get('version') != CACHE_VERSION or meta.get('sample_id') != entry.sample_id:
        raise TridentError(f'{directory}: stale cache, run preprocess again')
    arrays = {name: np.load(os.path.join(directory, f'{name}.npy'),
                            mmap_mode='r' if name == 'frames' else None)
              for name in _ARRAYS}
    return RecordingCache(entry=entry, iq_rate=meta['iq_rate'], **arrays)


def preprocess_manifest(entries: Sequence[ManifestEntry], cache_root,
                        iq_rate=SYNTH_IQ_RATE, overwrite=False) -> Dict[str, int]:
    """Caches every recording; returns the segment count per recording."""
    counts = {}
    for entry in tqdm(entries, desc='preprocess'):
        directory = cache_dir_of(cache_root, entry)
        meta = _meta(directory)
        if (not overwrite and meta is not None and meta.get('version') == CACHE_VERSION
                and meta.get('iq_rate') == float(iq_rate)):
            counts[entry.sample_id] = meta['segments']
            continue
        cache = preprocess_recording(entry, iq_rate)
        save_cache(cache, directory)
        counts[entry.sample_id] = len(cache)
    logger.info('Preprocessed %d recordings into %d segments', len(counts), sum(counts.values()))
    return counts


def load_split(entries: Sequence[ManifestEntry], cache_root, split: Optional[Split] = None) -> List[RecordingCache]:
    chosen = [e for e in entries if split is None or e.split == split]
    return [load_cache(cache_dir_of(cache_root, e), e) for e in chosen]


class MultiModalDataset(Dataset):
    """
    Segment-level view over recording caches. Items are dicts of model-ready
    tensors keyed by modality, plus 'label' (presence flag).
    """

    def __init__(self, caches: Sequence[RecordingCache], modalities=('audio', 'visual', 'rf')):
        self.caches = list(caches)
        self.modalities = tuple(modalities)
        self.index = [(c, k) for c, cache in enumerate(self.caches) for k in range(len(cache))]

    def __len__(self):
        return len(self.index)

    def __getitem__(self, idx):
        c, k = self.index[idx]
        cache = self.caches[c]
        item = {'label': torch.tensor(int(cache.labels[k]), dtype=torch.int64)}
        for m in self.modalities:
            if m == 'audio':
                item[m] = torch.from_numpy(np.array(cache.mfcc[k], dtype=np.float32))
            elif m == 'visual':
                item[m] = torch.from_numpy(video_layout(cache.video(k)))
            elif m == 'rf':
                item[m] = torch.from_numpy(rf_layout(cache.spectrogram(k)))
            else:
                raise TridentError(f"unknown modality '{m}'")
        return item

    def labels(self) -> np.ndarray:
        return np.array([int(self.caches[c].labels[k]) for c, k in self.index], dtype=np.int64)

    def tags(self):
        return [self.caches[c].entry.tags for c, _ in self.index]


def make_loader(dataset: Dataset, batch_size=32, shuffle=False, seed=0) -> DataLoader:
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, num_workers=0,
                      generator=torch.Generator().manual_seed(seed))


def iter_samples(cache: RecordingCache, with_iq=False) -> Iterator[MultiModalSample]:
    """Full samples of one recording, raw I/Q included on request."""
    iq_segments = load_iq(cache.entry.iq_path, cache.iq_rate) if with_iq else None
    for k in range(len(cache)):
        yield MultiModalSample(
            sample_id=segment_id(cache.entry.sample_id, k),
            audio=AudioSegment(np.asarray(cache.audio[k], dtype=np.float64)),
            video=cache.video(k),
            rf=cache.spectrogram(k),
            label=PresenceFlag(int(cache.labels[k])),
            tags=cache.entry.tags,
            iq=iq_segments[k] if iq_segments is not None else None,
        )


def raw_samples(entry: ManifestEntry, iq_rate=SYNTH_IQ_RATE) -> List[MultiModalSample]:
    """Samples that still point at their source frames; feature extraction happens at detection time."""
    audio_segments = segment_audio(load_wav(entry.audio_path))
    frame_count = len(list_frames(entry.frames_dir))
    starts = segment_to_stacks(frame_count)
    iq_segments = load_iq(entry.iq_path, iq_rate)
    flags = load_frame_labels(entry.frames_dir, frame_count, entry.label)
    k = min(len(audio_segments), len(starts), len(iq_segments))
    return [MultiModalSample(sample_id=segment_id(entry.sample_id, i),
                             audio=audio_segments[i], video=None, rf=None,
                             label=label_from_frames(flags[starts[i]:starts[i] + FRAMES_PER_STACK]),
                             tags=entry.tags, iq=iq_segments[i],
                             frames=(entry.frames_dir, starts[i]))
            for i in range(k)]


def probe_samples(caches: Sequence[RecordingCache], count=20, seed=0) -> List[MultiModalSample]:
    """A seeded pick of `count` samples across recordings, for calibration."""
    index = [(c, k) for c, cache in enumerate(caches) for k in range(len(cache))]
    if len(index) < count:
        raise TridentError(f'only {len(index)} samples available, {count} probes requested')
    chosen = sorted(derive_rng(seed, 'probes').choice(len(index), size=count, replace=False))
    picked = []
    for i in chosen:
        c, k = index[i]
        cache = caches[c]
        picked.append(MultiModalSample(
            sample_id=segment_id(cache.entry.sample_id, k),
            audio=AudioSegment(np.asarray(cache.audio[k], dtype=np.float64)),
            video=cache.video(k), rf=cache.spectrogram(k),
            label=PresenceFlag(int(cache.labels[k])), tags=cache.entry.tags))
    return picked


def segment_count(caches: Sequence[RecordingCache]) -> int:
    return sum(len(c) for c in caches)

