"""Binary PGM (P5) image files, 8-bit, maxval 255.

The on-disk unit for every image in the corpus. Arrays cross this boundary
as float32 in [0, 1] (the in-memory convention) or as raw uint8; floats are
quantized with round-half-away from zero via np.rint to keep write/read/write
cycles stable.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import FormatError


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError(f"write_pgm: expected [H, W], got shape {image.shape}")
    if image.dtype == np.uint8:
        raw = image
    elif image.dtype in (np.float32, np.float64):
        if image.size and (image.min() < 0.0 or image.max() > 1.0):
            raise FormatError("write_pgm: float image must lie in [0, 1]")
        raw = np.rint(image * 255.0).astype(np.uint8)
    else:
        raise FormatError(f"write_pgm: unsupported dtype {image.dtype}")
    h, w = raw.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raw.tobytes())


def _tokens(data: bytes):
    """Yield header tokens, skipping whitespace and # comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i:i + 1]
        if c.isspace():
            i += 1
            continue
        if c == b"#":
            while i < n and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace():
            j += 1
        yield data[i:j], j
        i = j


def read_pgm(path: str | os.PathLike, as_float: bool = True) -> np.ndarray:
    """Read a P5 file; returns float32 in [0, 1] by default, or raw uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _tokens(data)
    try:
        magic, _ = next(toks)
        if magic != b"P5":
            raise FormatError(f"read_pgm: {path}: bad magic {magic!r}, expected P5")
        wtok, _ = next(toks)
        htok, _ = next(toks)
        mtok, end = next(toks)
    except StopIteration:
        raise FormatError(f"read_pgm: {path}: truncated header") from None
    try:
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except ValueError:
        raise FormatError(f"read_pgm: {path}: non-numeric header fields") from None
    if maxval != 255:
        raise FormatError(f"read_pgm: {path}: maxval {maxval} unsupported, toolkit writes 255")
    if w < 1 or h < 1:
        raise FormatError(f"read_pgm: {path}: bad dimensions {w}x{h}")
    # exactly one whitespace byte separates maxval from the raster
    pixels = data[end + 1:]
    if len(pixels) != w * h:
        raise FormatError(f"read_pgm: {path}: expected {w * h} pixel bytes, got {len(pixels)}")
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)
    if as_float:
        return (img.astype(np.float32) / 255.0)
    return img.copy()
