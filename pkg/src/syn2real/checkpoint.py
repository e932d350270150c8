"""Binary model checkpoints.

Layout, all integers little-endian:

    magic "S2RA"
    u32 format version (currently 1)
    u32 tensor count
    per tensor:
        u32 name length, UTF-8 name
        u8 dtype tag (0 = float32)
        u8 rank
        rank x u32 extents
        raw little-endian float32 payload
    u32 metadata length, UTF-8 JSON

The metadata block records variant, geometry, extractor bookkeeping
(num_classes, frozen, whether the classifier head is present), the free-form
config dict and its hash. Loading rebuilds the module skeleton from the
metadata and then requires the tensor table to match it name-for-name and
shape-for-shape, so a truncated or mixed-up file fails loudly instead of
producing a silently different model.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import FormatError
from .models import (ExtractorModel, ModelBundle, ModelGeometry, build_bundle,
                     parse_variant)

MAGIC = b"S2RA"
VERSION = 1
_DTYPE_F32 = 0


def save_checkpoint(bundle: ModelBundle, path: str | os.PathLike) -> None:
    tensors = bundle.named_tensors()
    meta = {
        "variant": bundle.variant,
        "geometry": bundle.geometry.to_dict(),
        "config": bundle.config,
        "config_hash": bundle.config_hash,
    }
    if bundle.extractor is not None:
        meta["extractor"] = {
            "num_classes": bundle.extractor.num_classes,
            "frozen": bundle.extractor.frozen,
            "has_head": "head.weight" in bundle.extractor.params,
            "holdout_accuracy": bundle.extractor.holdout_accuracy,
        }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, t in tensors:
            arr = np.ascontiguousarray(t.data, dtype="<f4")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", _DTYPE_F32, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint {self.path}: truncated "
                              f"(wanted {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def load_checkpoint(path: str | os.PathLike) -> ModelBundle:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), os.fspath(path))
    if r.take(4) != MAGIC:
        raise FormatError(f"checkpoint {r.path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"checkpoint {r.path}: version {version}, expected {VERSION}")
    count = r.u32()
    if count > 100_000:
        raise FormatError(f"checkpoint {r.path}: implausible tensor count {count}")
    loaded: dict[str, np.ndarray] = {}
    order: list[str] = []
    for _ in range(count):
        name_len = r.u32()
        if name_len > 4096:
            raise FormatError(f"checkpoint {r.path}: tensor name length {name_len}")
        name = r.take(name_len).decode()
        tag = r.u8()
        if tag != _DTYPE_F32:
            raise FormatError(f"checkpoint {r.path}: unknown dtype tag {tag} for {name}")
        rank = r.u8()
        if rank > 8:
            raise FormatError(f"checkpoint {r.path}: rank {rank} for {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n_elem = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n_elem)
        if name in loaded:
            raise FormatError(f"checkpoint {r.path}: duplicate tensor {name}")
        loaded[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        order.append(name)
    meta_len = r.u32()
    try:
        meta = json.loads(r.take(meta_len).decode())
    except ValueError as exc:
        raise FormatError(f"checkpoint {r.path}: metadata is not valid JSON: {exc}") from None
    if r.pos != len(r.data):
        raise FormatError(f"checkpoint {r.path}: {len(r.data) - r.pos} trailing bytes")

    for key in ("variant", "geometry", "config", "config_hash"):
        if key not in meta:
            raise FormatError(f"checkpoint {r.path}: metadata missing {key!r}")
    variant = meta["variant"]
    spec = parse_variant(variant)
    geometry = ModelGeometry.from_dict(meta["geometry"])

    extractor = None
    if spec.needs_extractor:
        ext_meta = meta.get("extractor")
        if ext_meta is None:
            raise FormatError(f"checkpoint {r.path}: variant {variant} but no "
                              f"extractor metadata")
        extractor = ExtractorModel(geometry, int(ext_meta["num_classes"]), seed=0)
        if not ext_meta.get("has_head", False):
            extractor.discard_head()
        if ext_meta.get("frozen", False):
            extractor.freeze()
        acc = ext_meta.get("holdout_accuracy")
        extractor.holdout_accuracy = None if acc is None else float(acc)
    bundle = build_bundle(variant, geometry, seed=0, extractor=extractor,
                          config=meta["config"])

    expected = bundle.named_tensors()
    if [n for n, _ in expected] != order:
        raise FormatError(f"checkpoint {r.path}: tensor table mismatch; file has "
                          f"{order[:4]}..., model wants {[n for n, _ in expected][:4]}...")
    for name, tensor in expected:
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise FormatError(f"checkpoint {r.path}: {name} has shape {arr.shape}, "
                              f"model wants {tensor.data.shape}")
        tensor.data = arr
    if meta["config_hash"] != bundle.config_hash:
        # geometry/config reconstruction drifted; refuse rather than guess
        raise FormatError(f"checkpoint {r.path}: config hash mismatch "
                          f"({meta['config_hash']} vs {bundle.config_hash})")
    return bundle
