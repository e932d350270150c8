"""Corpus manifests: one text file naming every image with its scene,
variation, class tuple and domain.

Format, line by line:

    syn2real-manifest v1
    height=32 width=32 num_classes=4 num_scenes=500 variations_per_scene=5 seed=77
    scene_id=0 variation_id=0 class_tuple=0 path=images/s00000_v0.pgm domain_tag=synthetic
    ...

Record paths are relative to the manifest's directory. class_tuple is one or
more comma-separated ints (multi-factor datasets keep the full tuple). The
reader validates structure eagerly so a corrupt corpus fails at load, not
mid-training.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError
from .pgm import read_pgm

_MAGIC = "syn2real-manifest v1"
_HEADER_KEYS = ("height", "width", "num_classes", "num_scenes",
                "variations_per_scene", "seed")
_RECORD_KEYS = ("scene_id", "variation_id", "class_tuple", "path", "domain_tag")


@dataclass(frozen=True)
class ManifestRecord:
    scene_id: int
    variation_id: int
    class_tuple: tuple[int, ...]
    path: str
    domain_tag: str


@dataclass
class Manifest:
    height: int
    width: int
    num_classes: int
    num_scenes: int
    variations_per_scene: int
    seed: int
    records: list[ManifestRecord] = field(default_factory=list)

    def scene_ids(self) -> list[int]:
        return sorted({r.scene_id for r in self.records})

    def by_scene(self) -> dict[int, list[ManifestRecord]]:
        out: dict[int, list[ManifestRecord]] = {}
        for r in self.records:
            out.setdefault(r.scene_id, []).append(r)
        for rows in out.values():
            rows.sort(key=lambda r: r.variation_id)
        return out

    def class_of_scene(self, scene_id: int) -> tuple[int, ...]:
        for r in self.records:
            if r.scene_id == scene_id:
                return r.class_tuple
        raise KeyError(f"scene {scene_id} not in manifest")

    def validate(self) -> None:
        seen: set[tuple[int, int]] = set()
        scene_class: dict[int, tuple[int, ...]] = {}
        for r in self.records:
            key = (r.scene_id, r.variation_id)
            if key in seen:
                raise FormatError(f"manifest: duplicate record for scene {r.scene_id} "
                                  f"variation {r.variation_id}")
            seen.add(key)
            prev = scene_class.setdefault(r.scene_id, r.class_tuple)
            if prev != r.class_tuple:
                raise FormatError(f"manifest: scene {r.scene_id} carries two class "
                                  f"tuples {prev} and {r.class_tuple}")
            for c in r.class_tuple:
                if not 0 <= c < self.num_classes:
                    raise FormatError(f"manifest: scene {r.scene_id} class {c} outside "
                                      f"[0, {self.num_classes})")


def _fields(line: str, keys: tuple[str, ...], where: str) -> dict[str, str]:
    parts = line.split()
    got: dict[str, str] = {}
    for part in parts:
        if "=" not in part:
            raise FormatError(f"manifest {where}: token {part!r} is not key=value")
        k, v = part.split("=", 1)
        got[k] = v
    missing = [k for k in keys if k not in got]
    extra = [k for k in got if k not in keys]
    if missing or extra:
        raise FormatError(f"manifest {where}: missing {missing}, unexpected {extra}")
    return got


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    manifest.validate()
    lines = [_MAGIC]
    lines.append(" ".join(f"{k}={getattr(manifest, k)}" for k in _HEADER_KEYS))
    for r in manifest.records:
        cls = ",".join(str(c) for c in r.class_tuple)
        lines.append(f"scene_id={r.scene_id} variation_id={r.variation_id} "
                     f"class_tuple={cls} path={r.path} domain_tag={r.domain_tag}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str | os.PathLike) -> Manifest:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines or lines[0] != _MAGIC:
        raise FormatError(f"manifest {path}: first line must be {_MAGIC!r}")
    if len(lines) < 2:
        raise FormatError(f"manifest {path}: missing header line")
    head = _fields(lines[1], _HEADER_KEYS, f"{path} header")
    try:
        manifest = Manifest(**{k: int(head[k]) for k in _HEADER_KEYS})
    except ValueError:
        raise FormatError(f"manifest {path}: non-integer header value") from None
    for lineno, line in enumerate(lines[2:], start=3):
        rec = _fields(line, _RECORD_KEYS, f"{path}:{lineno}")
        try:
            cls = tuple(int(c) for c in rec["class_tuple"].split(","))
            manifest.records.append(ManifestRecord(
                scene_id=int(rec["scene_id"]),
                variation_id=int(rec["variation_id"]),
                class_tuple=cls,
                path=rec["path"],
                domain_tag=rec["domain_tag"],
            ))
        except ValueError:
            raise FormatError(f"manifest {path}:{lineno}: malformed numeric field") from None
    manifest.validate()
    return manifest


class ImageSet:
    """A manifest with its images materialized as one float32 array.

    Rows follow manifest record order. ``index`` maps (scene_id, variation_id)
    to a row; ``labels`` holds the class tuples as an [R, T] int array.
    """

    def __init__(self, manifest: Manifest, images: np.ndarray):
        if images.ndim != 4 or images.shape[0] != len(manifest.records):
            raise FormatError(f"ImageSet: images shape {images.shape} does not cover "
                              f"{len(manifest.records)} records")
        self.manifest = manifest
        self.images = images
        self.index = {(r.scene_id, r.variation_id): i
                      for i, r in enumerate(manifest.records)}
        widths = {len(r.class_tuple) for r in manifest.records}
        if len(widths) > 1:
            raise FormatError(f"ImageSet: inconsistent class tuple widths {sorted(widths)}")
        self.labels = np.array([r.class_tuple for r in manifest.records], dtype=np.int64)

    @classmethod
    def load(cls, manifest_path: str | os.PathLike) -> "ImageSet":
        manifest = read_manifest(manifest_path)
        base = os.path.dirname(os.fspath(manifest_path))
        images = np.empty((len(manifest.records), 1, manifest.height, manifest.width),
                          dtype=np.float32)
        for i, r in enumerate(manifest.records):
            img = read_pgm(os.path.join(base, r.path))
            if img.shape != (manifest.height, manifest.width):
                raise FormatError(f"ImageSet: {r.path} is {img.shape}, manifest says "
                                  f"({manifest.height}, {manifest.width})")
            images[i, 0] = img
        return cls(manifest, images)

    def image(self, scene_id: int, variation_id: int) -> np.ndarray:
        return self.images[self.index[(scene_id, variation_id)]]

    def scene_class(self, scene_id: int) -> tuple[int, ...]:
        return self.manifest.class_of_scene(scene_id)


def split_scenes(scene_ids: list[int], holdout_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic disjoint split of scene ids; returns (train, held_out).

    The held-out side gets max(1, round(fraction * n)) scenes so a small
    corpus still yields a usable evaluation split.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise FormatError(f"split_scenes: fraction {holdout_fraction} outside (0, 1)")
    ids = sorted(scene_ids)
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(ids)]))
    perm = rng.permutation(len(ids))
    n_hold = max(1, int(round(holdout_fraction * len(ids))))
    if n_hold >= len(ids):
        raise FormatError("split_scenes: holdout would swallow every scene")
    hold = sorted(ids[i] for i in perm[:n_hold])
    train = sorted(ids[i] for i in perm[n_hold:])
    return train, hold
