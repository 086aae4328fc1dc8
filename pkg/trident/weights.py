"""
Self-describing weight files:

    b"TRDW" | uint32 little-endian header length | JSON header | tensor data

The header names the architecture, its build config, the input spec and a
directory of tensors (name, shape, dtype, byte offset). Tensor data is
little-endian float32, integer buffers are stored as int64.
"""
import json
import logging
import os
import struct

import numpy as np
import torch

from luna import create_folder_for_file, fetch_best_ckpt_name
from trident import fusion  # noqa: F401  registers the fusion architectures
from trident.errors import WeightFileError
from trident.model_zoo import build_model

logger = logging.getLogger(__name__)

MAGIC = b'TRDW'
FORMAT_VERSION = 1
_DTYPES = {'float32': '<f4', 'int64': '<i8'}


def save_weights(model, path):
    state = model.state_dict()
    directory = []
    blobs = []
    offset = 0
    for name, tensor in state.items():
        dtype = 'float32' if tensor.is_floating_point() else 'int64'
        blob = np.ascontiguousarray(tensor.detach().cpu().numpy().astype(_DTYPES[dtype])).tobytes()
        directory.append({'name': name, 'shape': list(tensor.shape), 'dtype': dtype,
                          'offset': offset, 'nbytes': len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({
        'format_version': FORMAT_VERSION,
        'arch': model.arch,
        'config': model.config,
        'input_spec': list(model.input_spec),
        'tensors': directory,
    }, sort_keys=True).encode('utf8')
    create_folder_for_file(path)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<I', len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    logger.info('Saved %s weights to %s', model.arch, path)
    return path


def read_header(path):
    if not os.path.isfile(path):
        raise WeightFileError(f'weight file not found: {path}')
    with open(path, 'rb') as f:
        data = f.read()
    if data[:4] != MAGIC or len(data) < 8:
        raise WeightFileError(f'{path} is not a weight file')
    (header_len,) = struct.unpack('<I', data[4:8])
    try:
        header = json.loads(data[8:8 + header_len].decode('utf8'))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise WeightFileError(f'{path}: corrupt header') from None
    return header, data[8 + header_len:]


def _state_from(header, payload, path):
    state = {}
    for entry in header['tensors']:
        start, end = entry['offset'], entry['offset'] + entry['nbytes']
        if end > len(payload):
            raise WeightFileError(f'{path}: truncated at tensor {entry["name"]}')
        array = np.frombuffer(payload[start:end], dtype=_DTYPES[entry['dtype']]).reshape(entry['shape'])
        state[entry['name']] = torch.from_numpy(array.copy())
    return state


def load_weights(path, arch=None):
    """Rebuilds the model the file describes; `arch` pins the expected architecture."""
    header, payload = read_header(path)
    if arch is not None and header['arch'] != arch:
        raise WeightFileError(f"{path}: architecture mismatch, file holds '{header['arch']}', "
                              f"expected '{arch}'")
    model = build_model(header['arch'], **header['config'])
    if list(model.input_spec) != header['input_spec']:
        raise WeightFileError(f'{path}: input spec {header["input_spec"]} does not match '
                              f'{list(model.input_spec)}')
    _load_state(model, _state_from(header, payload, path), path)
    model.eval()
    return model


def load_weights_into(model, path):
    header, payload = read_header(path)
    if header['arch'] != model.arch or header['input_spec'] != list(model.input_spec):
        raise WeightFileError(f"{path}: architecture mismatch, file holds '{header['arch']}' "
                              f"{header['input_spec']}, model is '{model.arch}' {list(model.input_spec)}")
    _load_state(model, _state_from(header, payload, path), path)
    return model


def _load_state(model, state, path):
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise WeightFileError(f'{path}: {e}') from None


def model_path(models_dir, name):
    return os.path.join(models_dir, name)


def load_best(models_dir, name, arch=None):
    """The `.best` checkpoint of `name`, falling back to the latest epoch."""
    base = model_path(models_dir, name)
    found = fetch_best_ckpt_name(base)
    if found is None:
        raise WeightFileError(f'missing weight file {base}.best')
    return load_weights(found, arch=arch)
