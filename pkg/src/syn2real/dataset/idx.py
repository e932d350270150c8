"""IDX file format: the big-endian header + payload layout used for digit
datasets.

Header: two zero bytes, a dtype code byte, a rank byte, then rank uint32
extents, all big-endian; the payload follows in row-major order, also
big-endian for multi-byte types.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError

_CODE_TO_DTYPE = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

_KIND_TO_CODE = {
    ("u", 1): 0x08,
    ("i", 1): 0x09,
    ("i", 2): 0x0B,
    ("i", 4): 0x0C,
    ("f", 4): 0x0D,
    ("f", 8): 0x0E,
}


def save_idx(path: str | os.PathLike, array: np.ndarray) -> None:
    array = np.asarray(array)
    key = (array.dtype.kind, array.dtype.itemsize)
    if key not in _KIND_TO_CODE:
        raise FormatError(f"save_idx: no IDX code for dtype {array.dtype}")
    if array.ndim < 1 or array.ndim > 255:
        raise FormatError(f"save_idx: rank {array.ndim} out of range")
    code = _KIND_TO_CODE[key]
    be = array.astype(_CODE_TO_DTYPE[code], copy=False)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, code, array.ndim))
        for extent in array.shape:
            fh.write(struct.pack(">I", extent))
        fh.write(np.ascontiguousarray(be).tobytes())


def load_idx(path: str | os.PathLike, normalize: bool = False) -> np.ndarray:
    """Load an IDX array in native byte order.

    With ``normalize`` set, uint8 payloads come back as float32 in [0, 1]
    (that is, divided by 255); other dtypes are returned untouched and the
    flag is rejected, since silently rescaling ints of unknown range would
    corrupt label arrays.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"load_idx: {path}: shorter than the 4-byte magic")
    z0, z1, code, rank = struct.unpack(">BBBB", data[:4])
    if z0 != 0 or z1 != 0:
        raise FormatError(f"load_idx: {path}: magic must start 0x00 0x00, got "
                          f"0x{z0:02x} 0x{z1:02x}")
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"load_idx: {path}: unknown dtype code 0x{code:02x}")
    if len(data) < 4 + 4 * rank:
        raise FormatError(f"load_idx: {path}: truncated extents (rank {rank})")
    shape = struct.unpack(f">{rank}I", data[4:4 + 4 * rank])
    dtype = _CODE_TO_DTYPE[code]
    count = 1
    for extent in shape:
        count *= extent
    payload = data[4 + 4 * rank:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(f"load_idx: {path}: payload is {len(payload)} bytes, "
                          f"shape {shape} needs {count * dtype.itemsize}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    arr = arr.astype(dtype.newbyteorder("="))
    if normalize:
        if code != 0x08:
            raise FormatError("load_idx: normalize applies to uint8 payloads only")
        return arr.astype(np.float32) / 255.0
    return arr
