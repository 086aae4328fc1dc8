import logging
import math
import os
from typing import List

import numpy as np
from fastnumbers import fast_real

from trident.core_types import FRAMES_PER_STACK, IMAGE_SIZE, SEGMENT_SECONDS, VIDEO_FPS, PresenceFlag
from trident.errors import TridentError
from trident.imaging import read_rgb, resize_bilinear

logger = logging.getLogger(__name__)

FRAME_PATTERN = 'frame_{:06d}.png'
FRAME_LABELS_FILE = 'frame_labels.txt'


def frame_path(frames_dir, index):
    return os.path.join(frames_dir, FRAME_PATTERN.format(index))


def list_frames(frames_dir) -> List[str]:
    if not os.path.isdir(frames_dir):
        raise TridentError(f'frames directory not found: {frames_dir}')
    names = sorted(f for f in os.listdir(frames_dir) if f.lower().endswith('.png'))
    return [os.path.join(frames_dir, f) for f in names]


def load_frame(path, size=IMAGE_SIZE) -> np.ndarray:
    """(3, size, size) float32 frame in [0, 1]."""
    rgb = normalize_codes(read_rgb(path)).transpose(2, 0, 1)
    resized = resize_bilinear(rgb, size)
    return np.clip(resized, 0.0, 1.0).astype(np.float32)


def load_frame_stack(frames_dir, start_index, size=IMAGE_SIZE) -> np.ndarray:
    frames = list_frames(frames_dir)
    if start_index < 0 or start_index + FRAMES_PER_STACK > len(frames):
        raise TridentError(f'incomplete stack: {frames_dir} has {len(frames)} frames, '
                           f'need {FRAMES_PER_STACK} from index {start_index}')
    stack = [load_frame(p, size) for p in frames[start_index:start_index + FRAMES_PER_STACK]]
    return np.stack(stack)


def segment_to_stacks(total_frames, fps=VIDEO_FPS) -> List[int]:
    """Start index of each 0.25 s window; the window step of 7.5 frames rounds half up."""
    step = fps * SEGMENT_SECONDS
    starts = []
    k = 0
    while True:
        start = math.floor(k * step + 0.5)
        if start + FRAMES_PER_STACK > total_frames:
            break
        starts.append(start)
        k += 1
    return starts


def normalize_codes(values: np.ndarray, max_code=255.0) -> np.ndarray:
    """
    Integer pixel codes are divided by `max_code`; float input is taken as
    already normalized and only clipped to [0, 1].
    """
    values = np.asarray(values)
    if np.issubdtype(values.dtype, np.integer):
        return np.clip(values.astype(np.float32) / max_code, 0.0, 1.0)
    return np.clip(values.astype(np.float32), 0.0, 1.0)


def load_frame_labels(frames_dir, total_frames, default: PresenceFlag) -> List[PresenceFlag]:
    """
    Per-frame presence from `frame_labels.txt` (one 0/1 per line). Without
    the file every frame carries the recording's label.
    """
    labels_path = os.path.join(frames_dir, FRAME_LABELS_FILE)
    if not os.path.exists(labels_path):
        return [default] * total_frames
    with open(labels_path, 'r', encoding='utf8') as f:
        tokens = [line.strip() for line in f if line.strip()]
    if len(tokens) < total_frames:
        raise TridentError(f'{labels_path}: {len(tokens)} frame labels for {total_frames} frames')
    values = list(map(fast_real, tokens[:total_frames]))
    if any(v not in (0, 1) for v in values):
        raise TridentError(f'{labels_path}: frame labels must be 0 or 1')
    return [PresenceFlag(int(v)) for v in values]


def write_frame_labels(frames_dir, flags):
    with open(os.path.join(frames_dir, FRAME_LABELS_FILE), 'w', encoding='utf8') as f:
        for flag in flags:
            f.write(f'{int(flag)}\n')
