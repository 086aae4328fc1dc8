import logging

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from trident.errors import TridentError

logger = logging.getLogger(__name__)


def resize_bilinear(images: np.ndarray, size) -> np.ndarray:
    """
    Bilinear resize of the two trailing axes with the half-pixel
    (align_corners=False) convention and no antialiasing. Accepts (H, W),
    (C, H, W) or (N, C, H, W) arrays and keeps the input dtype family.
    """
    images = np.asarray(images)
    if isinstance(size, int):
        size = (size, size)
    lead = images.shape[:-2]
    flat = images.reshape((-1, 1) + images.shape[-2:])
    dtype = torch.float64 if images.dtype == np.float64 else torch.float32
    with torch.no_grad():
        out = F.interpolate(torch.as_tensor(flat, dtype=dtype), size=tuple(size),
                            mode='bilinear', align_corners=False)
    return out.numpy().reshape(lead + tuple(size))


def read_rgb(path) -> np.ndarray:
    """(H, W, 3) uint8 RGB, whatever the stored mode."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert('RGB'))
    except (UnidentifiedImageError, OSError) as e:
        raise TridentError(f'cannot decode image {path}: {e}') from None


def write_png(path, pixels: np.ndarray):
    """Writes (H, W) gray or (H, W, 3) RGB uint8 pixels."""
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path, format='PNG')


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
