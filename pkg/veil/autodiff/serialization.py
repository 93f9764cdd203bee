"""
Veil
Weight interchange format.

A weight directory holds
    header.json   {"dtype": "<f8", "tensors": [{"name", "shape", "offset", "count"}, ...]}
    weights.bin   little-endian float64 values, concatenated in header order
Offsets are in bytes. Round trips are bit-exact.

Licensed under the MIT License (see LICENSE for details)
"""

import json
import os
from collections import OrderedDict

import numpy as np

from ..errors import DatasetError

HEADER = 'header.json'
WEIGHTS = 'weights.bin'
DTYPE = '<f8'


def save_weights(named_arrays, directory):
    """Args:
        named_arrays [iterable of (name, array or Tensor)]: order is kept.
        directory [str]: created if missing.
    """
    os.makedirs(directory, exist_ok=True)
    entries, offset = [], 0
    with open(os.path.join(directory, WEIGHTS), 'wb') as f:
        for name, value in named_arrays:
            array = np.ascontiguousarray(getattr(value, 'data', value), dtype=DTYPE)
            f.write(array.tobytes())
            entries.append({'name': name, 'shape': list(array.shape), 'offset': offset, 'count': int(array.size)})
            offset += array.nbytes
    with open(os.path.join(directory, HEADER), 'w', encoding='utf-8', newline='\n') as f:
        json.dump({'dtype': DTYPE, 'tensors': entries}, f, indent=2)
        f.write('\n')


def load_weights(directory):
    """Returns:
        OrderedDict name -> float64 ndarray, in header order.
    """
    header_path = os.path.join(directory, HEADER)
    try:
        with open(header_path, 'r', encoding='utf-8') as f:
            header = json.load(f)
        with open(os.path.join(directory, WEIGHTS), 'rb') as f:
            blob = f.read()
    except (OSError, ValueError) as e:
        raise DatasetError("cannot read weights in {}: {}".format(directory, e))
    if header.get('dtype') != DTYPE:
        raise DatasetError("{}: unsupported dtype {!r}".format(header_path, header.get('dtype')))

    arrays = OrderedDict()
    for entry in header.get('tensors', []):
        shape, offset = tuple(entry['shape']), int(entry['offset'])
        count = int(np.prod(shape, dtype=np.int64))
        if count != entry['count'] or offset + 8 * count > len(blob):
            raise DatasetError("{}: tensor {} overruns weights.bin".format(header_path, entry['name']))
        values = np.frombuffer(blob, dtype=DTYPE, count=count, offset=offset)
        arrays[entry['name']] = values.astype(np.float64).reshape(shape)
    return arrays
