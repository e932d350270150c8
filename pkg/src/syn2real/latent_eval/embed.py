"""Latent-space embedding of a corpus: one point per scene, optional mirrors.

The protocol takes variation 0 of every scene only, encodes it, and (when
include_flips is set) also encodes the horizontal mirror as a second point.
Output order is deterministic: all originals in ascending scene order, then
all mirrors in the same order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, no_grad
from ..dataset.manifest import ImageSet
from ..errors import DataError, FormatError
from ..models import FeatureCache, ModelBundle, encode


@dataclass(frozen=True, eq=False)
class LatentPoint:
    vector: np.ndarray
    class_tuple: tuple[int, ...]
    scene_id: int
    flipped: bool
    domain_tag: str


def _encode_rows(bundle: ModelBundle, data: ImageSet, refs: list[tuple[int, int]],
                 flip: bool, cache: FeatureCache | None) -> np.ndarray:
    if cache is not None and bundle.extractor is not None:
        feats = cache.features(refs, flip=flip)
        out = bundle.encoder.forward(Tensor(feats))
        return (out[0] if bundle.spec.vae else out).data
    imgs = np.stack([data.image(s, v) for s, v in refs])
    if flip:
        imgs = np.ascontiguousarray(imgs[..., ::-1])
    return encode(bundle, imgs).data


def embed(bundle: ModelBundle, data: ImageSet, include_flips: bool = True,
          batch_size: int = 256, cache: FeatureCache | None = None) -> list[LatentPoint]:
    manifest = data.manifest
    scenes = manifest.scene_ids()
    refs = []
    for sid in scenes:
        if (sid, 0) not in data.index:
            raise DataError(f"embed: scene {sid} has no variation 0")
        refs.append((sid, 0))
    domain = {r.scene_id: r.domain_tag for r in manifest.records}
    points: list[LatentPoint] = []
    flips = (False, True) if include_flips else (False,)
    with no_grad():
        for flip in flips:
            for lo in range(0, len(refs), batch_size):
                chunk = refs[lo:lo + batch_size]
                vecs = _encode_rows(bundle, data, chunk, flip, cache)
                for (sid, _), vec in zip(chunk, vecs):
                    points.append(LatentPoint(
                        vector=np.array(vec, dtype=np.float32),
                        class_tuple=manifest.class_of_scene(sid),
                        scene_id=sid, flipped=flip, domain_tag=domain[sid]))
    return points


def write_embeddings_csv(points: list[LatentPoint], path: str | os.PathLike) -> None:
    if not points:
        raise DataError("write_embeddings_csv: no points")
    d = len(points[0].vector)
    with open(path, "w", encoding="utf-8") as fh:
        cols = ["scene_id", "flipped", "domain_tag", "class_tuple"]
        cols += [f"z{i}" for i in range(d)]
        fh.write(",".join(cols) + "\n")
        for p in points:
            cls = "|".join(str(c) for c in p.class_tuple)
            vals = [str(p.scene_id), "1" if p.flipped else "0", p.domain_tag, cls]
            vals += [repr(float(v)) for v in p.vector]
            fh.write(",".join(vals) + "\n")


def read_embeddings_csv(path: str | os.PathLike) -> list[LatentPoint]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:4] != ["scene_id", "flipped", "domain_tag", "class_tuple"]:
            raise FormatError(f"embeddings csv {path}: unexpected header {header[:4]}")
        d = len(header) - 4
        points = []
        for ln, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 4 + d:
                raise FormatError(f"embeddings csv {path}:{ln}: "
                                  f"{len(parts)} fields, expected {4 + d}")
            vec = np.array([float(v) for v in parts[4:]], dtype=np.float32)
            points.append(LatentPoint(
                vector=vec,
                class_tuple=tuple(int(c) for c in parts[3].split("|")),
                scene_id=int(parts[0]), flipped=parts[1] == "1",
                domain_tag=parts[2]))
    return points
