"""Binary snapshot-tensor files.

Layout (all little-endian)::

    b"EMVS1"                       5-byte magic
    uint32 I1, uint32 I2, uint32 I3
    I1*I2*I3 complex entries as interleaved float64 (re, im)

Entries are stored mode-1-major: ``T[i1, i2, i3]`` sits at flat position
``(i1*I2 + i2)*I3 + i3`` (0-based), i.e. the last index runs fastest.
"""

import struct

import numpy as np

from .tensor_core import as_complex_tensor3

MAGIC = b"EMVS1"
_HEADER = struct.Struct("<3I")


class DatasetFormatError(ValueError):
    pass


def write_dataset(path, tensor):
    T = as_complex_tensor3(tensor)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*T.shape))
        fh.write(np.ascontiguousarray(T).astype("<c16").tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    off = len(MAGIC)
    if len(raw) < off + _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    dims = _HEADER.unpack_from(raw, off)
    off += _HEADER.size
    count = int(np.prod(dims))
    if min(dims) < 1 or len(raw) - off != 16 * count:
        raise DatasetFormatError(
            f"{path}: payload of {len(raw) - off} bytes does not match dims {dims}")
    data = np.frombuffer(raw, dtype="<c16", count=count, offset=off)
    return data.astype(np.complex128).reshape(dims)
