import logging
import os
import zlib

import numpy as np
import psutil

logger = logging.getLogger(__name__)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """
    An independent generator stream for (seed, key, ...). String keys are
    hashed with crc32 so the stream does not depend on PYTHONHASHSEED.
    """
    entropy = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode('utf8')))
        else:
            entropy.append(int(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def create_folder(folder_path):
    if not os.path.exists(folder_path):
        os.makedirs(folder_path, exist_ok=True)


def create_folder_for_file(file_path):
    folder = os.path.dirname(os.path.abspath(file_path))
    create_folder(folder)


def memory_mb():
    top = psutil.Process(os.getpid())
    return top.memory_full_info().uss / 1024. / 1024.


def chunks(lst, chunk_size):
    """Yield successive n-sized chunks from lst."""
    for i in range(0, len(lst), chunk_size):
        yield lst[i:i + chunk_size]


class Aggregator:
    """
    Usage:
        agg = Aggregator()
        agg.aggregate(("mcd", 3.1), ("ssim", 0.95))
        agg.aggregate(("mcd", 3.9), ("ssim", 0.97))
        agg.mean("mcd")  --> 3.5
        agg.list("ssim") --> [0.95, 0.97]
    Keys are created on first use, so different call sites may feed
    different keys into one aggregator.
    """

    def __init__(self):
        self.__saved = {}

    @property
    def keys(self):
        return list(self.__saved)

    def aggregate(self, *args):
        for arg in args:
            if not (isinstance(arg, tuple) and len(arg) == 2 and isinstance(arg[0], str)):
                raise Exception("you must specify a key for every value")
            key, value = arg
            saved = self.__saved.setdefault(key, [])
            if isinstance(value, list):
                saved.extend(value)
            else:
                saved.append(value)

    def mean(self, key):
        return float(np.mean(self._values(key)))

    def std(self, key):
        return float(np.std(self._values(key)))

    def list(self, key):
        return list(self._values(key))

    def _values(self, key):
        if key not in self.__saved:
            raise KeyError(f"nothing aggregated under {key}")
        return self.__saved[key]
