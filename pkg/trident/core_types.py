"""
Sample data model shared by every stage of the pipeline: presence flags,
condition tags, the on-disk manifest and the file-level dataset split.

Internally a label is always a presence flag (1 = drone). The class-index
convention of the published tables (drone = 0, no_drone = 1) is only used
when reports are written, see `PresenceFlag.class_index`.
"""
import dataclasses
import logging
import math
import os
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from luna.public import derive_rng
from trident.errors import ManifestError, ShapeError, TridentError

logger = logging.getLogger(__name__)

AUDIO_RATE = 44100
SEGMENT_SECONDS = 0.25
AUDIO_SEGMENT_LENGTH = 11025
VIDEO_FPS = 30
FRAMES_PER_STACK = 7
IMAGE_SIZE = 112
# a 10 s recording
SEGMENTS_PER_RECORDING = 40

MANIFEST_FIELDS = ('sample_id', 'audio_path', 'frames_dir', 'iq_path', 'label',
                   'lighting', 'location', 'los', 'split')


class PresenceFlag(IntEnum):
    ABSENT = 0
    PRESENT = 1

    @property
    def token(self):
        return 'drone' if self is PresenceFlag.PRESENT else 'no_drone'

    @property
    def class_index(self):
        # drone = class 0, no drone = class 1 in every published table
        return 0 if self is PresenceFlag.PRESENT else 1

    @classmethod
    def from_token(cls, token):
        if token == 'drone':
            return cls.PRESENT
        if token == 'no_drone':
            return cls.ABSENT
        raise ValueError(f"unknown label '{token}', expected drone/no_drone")


class Lighting(str, Enum):
    DAYLIGHT = 'daylight'
    SUNSET = 'sunset'


class Location(str, Enum):
    URBAN = 'urban'
    NON_URBAN = 'non_urban'


class LineOfSight(str, Enum):
    LOS = 'los'
    NLOS = 'nlos'


class Split(str, Enum):
    TRAIN = 'train'
    VAL = 'val'
    TEST = 'test'


@dataclasses.dataclass(frozen=True)
class ConditionTags:
    lighting: Lighting
    location: Location
    los: LineOfSight


@dataclasses.dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    audio_path: str
    frames_dir: str
    iq_path: str
    label: PresenceFlag
    lighting: Lighting
    location: Location
    los: LineOfSight
    split: Split

    @property
    def tags(self) -> ConditionTags:
        return ConditionTags(self.lighting, self.location, self.los)


@dataclasses.dataclass(frozen=True, eq=False)
class AudioSegment:
    samples: np.ndarray
    sample_rate: int = AUDIO_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError((AUDIO_SEGMENT_LENGTH,), samples.shape, what='audio segment')
        if samples.shape[0] != AUDIO_SEGMENT_LENGTH:
            raise ShapeError((AUDIO_SEGMENT_LENGTH,), samples.shape, what='audio segment')
        if self.sample_rate != AUDIO_RATE:
            raise TridentError(f'audio sample rate {self.sample_rate} Hz is not supported, '
                               f'expected {AUDIO_RATE} Hz')
        if not np.all(np.isfinite(samples)) or np.abs(samples).max(initial=0.) > 1.0:
            raise TridentError('audio samples must be finite and lie in [-1, 1]')
        object.__setattr__(self, 'samples', samples)


@dataclasses.dataclass(frozen=True, eq=False)
class MultiModalSample:
    """
    One synchronized 0.25 s unit. `video` is the (7, 3, 112, 112) frame
    stack and `rf` the (1, 3, 112, 112) spectrogram, both in [0, 1]. The
    raw I/Q segment is kept so RF degradation can run before the
    spectrogram is computed. A sample read lazily leaves `video` unset and
    names its stack as (frames_dir, start frame) in `frames`.
    """
    sample_id: str
    audio: AudioSegment
    video: Optional[np.ndarray]
    rf: Optional[np.ndarray]
    label: PresenceFlag
    tags: Optional[ConditionTags]
    iq: Optional[object] = None
    frames: Optional[Tuple[str, int]] = None


def label_from_frames(frame_labels: Sequence[int]) -> PresenceFlag:
    if len(frame_labels) == 0:
        raise TridentError('no frames')
    return PresenceFlag(int(max(int(f) for f in frame_labels)))


def _resolve(base_dir, path):
    if os.path.isabs(path):
        return os.path.normpath(path)
    return os.path.normpath(os.path.join(base_dir, path))


def _parse_enum(enum_cls, value, what, path, line_no):
    try:
        return enum_cls(value)
    except ValueError:
        choices = [e.value for e in enum_cls]
        raise ManifestError(f"unknown {what} tag '{value}', expected one of {choices}",
                            path, line_no) from None


def load_manifest(path, check_paths=True) -> List[ManifestEntry]:
    if not os.path.isfile(path):
        raise ManifestError('manifest not found', path)
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, 'r', encoding='utf8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip('\r\n')
            if not line.strip() or line.startswith('#'):
                continue
            fields = line.split('\t')
            if len(fields) != len(MANIFEST_FIELDS):
                raise ManifestError(f'expected {len(MANIFEST_FIELDS)} tab-separated fields, '
                                    f'got {len(fields)}', path, line_no)
            sample_id, audio_path, frames_dir, iq_path, label, lighting, location, los, split = fields
            if not sample_id:
                raise ManifestError('empty sample_id', path, line_no)
            if sample_id in seen:
                raise ManifestError(f"duplicate sample_id '{sample_id}'", path, line_no)
            seen.add(sample_id)
            try:
                label = PresenceFlag.from_token(label)
            except ValueError as e:
                raise ManifestError(str(e), path, line_no) from None
            entry = ManifestEntry(
                sample_id=sample_id,
                audio_path=_resolve(base_dir, audio_path),
                frames_dir=_resolve(base_dir, frames_dir),
                iq_path=_resolve(base_dir, iq_path),
                label=label,
                lighting=_parse_enum(Lighting, lighting, 'lighting', path, line_no),
                location=_parse_enum(Location, location, 'location', path, line_no),
                los=_parse_enum(LineOfSight, los, 'los', path, line_no),
                split=_parse_enum(Split, split, 'split', path, line_no),
            )
            if check_paths:
                _check_entry_paths(entry, path, line_no)
            entries.append(entry)
    logger.info('Loaded %d manifest entries from %s', len(entries), path)
    return entries


def _check_entry_paths(entry: ManifestEntry, path, line_no):
    for file_path in (entry.audio_path, entry.iq_path):
        if not os.path.isfile(file_path) or not os.access(file_path, os.R_OK):
            raise ManifestError(f'missing file {file_path}', path, line_no)
    if not os.path.isdir(entry.frames_dir) or not os.access(entry.frames_dir, os.R_OK):
        raise ManifestError(f'missing frames directory {entry.frames_dir}', path, line_no)


def _relative_if_inside(base_dir, file_path):
    rel = os.path.relpath(file_path, base_dir)
    if rel.startswith(os.pardir):
        return os.path.abspath(file_path)
    return rel


def write_manifest(entries: Sequence[ManifestEntry], path, header=None):
    base_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(base_dir, exist_ok=True)
    with open(path, 'w', encoding='utf8') as f:
        f.write('# ' + '\t'.join(MANIFEST_FIELDS) + '\n')
        if header:
            for line in header.splitlines():
                f.write(f'# {line}\n')
        for e in entries:
            row = [e.sample_id,
                   _relative_if_inside(base_dir, e.audio_path),
                   _relative_if_inside(base_dir, e.frames_dir),
                   _relative_if_inside(base_dir, e.iq_path),
                   e.label.token, e.lighting.value, e.location.value, e.los.value,
                   e.split.value]
            f.write('\t'.join(row) + '\n')
    return path


def _allocate(n, ratios) -> List[int]:
    # largest remainder: every count is floor or ceil of ratio * n
    quotas = [r * n for r in ratios]
    counts = [math.floor(q + 1e-9) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(entries: Sequence[ManifestEntry],
                  ratios: Tuple[float, float, float] = (0.77, 0.11, 0.12),
                  seed: int = 0) -> Dict[Split, List[ManifestEntry]]:
    """
    File-level split stratified by label. Within a class the files are
    shuffled with a stream derived from (seed, label) and cut at the
    largest-remainder counts of ratio x class size. Every returned entry has
    its `split` field rewritten; within a split the manifest order is kept.
    """
    ratios = tuple(float(r) for r in ratios)
    splits = (Split.TRAIN, Split.VAL, Split.TEST)
    if len(ratios) != len(splits):
        raise TridentError(f'expected {len(splits)} split ratios, got {len(ratios)}')
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise TridentError(f'split ratios must be positive and sum to 1, got {ratios}')

    by_class = {}
    for idx, e in enumerate(entries):
        by_class.setdefault(e.label, []).append(idx)

    assigned = {}
    for label in sorted(by_class):
        indices = by_class[label]
        if len(indices) < len(splits):
            raise TridentError(f'insufficient files: class {label.token} has {len(indices)} '
                               f'files for {len(splits)} splits')
        rng = derive_rng(seed, 'split', int(label))
        shuffled = [indices[i] for i in rng.permutation(len(indices))]
        start = 0
        for split, count in zip(splits, _allocate(len(indices), ratios)):
            for idx in shuffled[start:start + count]:
                assigned[idx] = split
            start += count

    partition = {split: [] for split in splits}
    for idx, e in enumerate(entries):
        partition[assigned[idx]].append(dataclasses.replace(e, split=assigned[idx]))
    logger.info('Split %d files into %s', len(entries),
                {s.value: len(v) for s, v in partition.items()})
    return partition
