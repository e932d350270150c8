"""Digit corpus: IDX-backed 28x28 grayscale digits turned into a
scene/variation manifest, plus a procedural generator for environments
without a digits download.

The procedural digits render a 5x7 bitmap font through a random affine warp
(rotation, shear, anisotropic scale, translation) with a soft stroke
threshold. They are much cleaner than handwriting but give a balanced,
learnable 10-class problem with the same 28x28 geometry and IDX packaging.

digits_to_corpus treats each digit image as a scene whose intensity acts as
the compositing alpha over a texture background; variation 0 keeps the digit
untouched, later variations re-warp it slightly. The shifted domain swaps in
the disjoint texture pool and the same photometric transform the shape
corpus uses.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, FormatError
from .generator import (
    SHIFTED_TEXTURE_POOL,
    TRAIN_TEXTURE_POOL,
    photometric_shift,
    render_background,
    variation_textures,
)
from .idx import save_idx
from .manifest import Manifest, ManifestRecord, write_manifest
from .pgm import write_pgm

_FONT = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

DIGIT_SIZE = 28


def _font_bitmap(digit: int) -> np.ndarray:
    rows = _FONT[digit]
    return np.array([[c == "1" for c in row] for row in rows], dtype=np.float64)


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at float coords with zero fill outside."""
    h, w = img.shape
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0

    def at(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.zeros(yi.shape)
        vals[inside] = img[yi[inside], xi[inside]]
        return vals

    return (at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx
            + at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx)


def warp_affine(img: np.ndarray, inverse: np.ndarray,
                out_hw: tuple[int, int]) -> np.ndarray:
    """Apply a 2x3 inverse-mapping affine: out[y, x] = img(inverse @ [y, x, 1])."""
    if inverse.shape != (2, 3):
        raise ConfigError(f"warp_affine: inverse map must be 2x3, got {inverse.shape}")
    oh, ow = out_hw
    yy, xx = np.mgrid[0:oh, 0:ow].astype(np.float64)
    ys = inverse[0, 0] * yy + inverse[0, 1] * xx + inverse[0, 2]
    xs = inverse[1, 0] * yy + inverse[1, 1] * xx + inverse[1, 2]
    return _bilinear(img, ys, xs)


def _affine_about(center_out: tuple[float, float], center_in: tuple[float, float],
                  sy: float, sx: float, angle: float, shear: float,
                  ty: float, tx: float) -> np.ndarray:
    """Inverse map for: scale, shear, rotate about centers, then translate."""
    ca, sa = np.cos(angle), np.sin(angle)
    fwd = np.array([[ca, -sa], [sa, ca]]) @ np.array([[1.0, shear], [0.0, 1.0]]) \
        @ np.array([[sy, 0.0], [0.0, sx]])
    inv = np.linalg.inv(fwd)
    cy_o, cx_o = center_out
    cy_i, cx_i = center_in
    # out = fwd @ (in - c_in) + c_out + t   =>   in = inv @ (out - c_out - t) + c_in
    offset = inv @ np.array([-(cy_o + ty), -(cx_o + tx)]) + np.array([cy_i, cx_i])
    return np.array([[inv[0, 0], inv[0, 1], offset[0]],
                     [inv[1, 0], inv[1, 1], offset[1]]])


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One 28x28 float image in [0, 1] from the bitmap font via a random warp."""
    bitmap = _font_bitmap(digit)
    target_h = rng.uniform(16.0, 21.0)
    aspect = rng.uniform(0.85, 1.15)
    sy = target_h / bitmap.shape[0]
    sx = target_h * (bitmap.shape[1] / bitmap.shape[0]) * aspect / bitmap.shape[1]
    inv = _affine_about(
        center_out=((DIGIT_SIZE - 1) / 2.0, (DIGIT_SIZE - 1) / 2.0),
        center_in=((bitmap.shape[0] - 1) / 2.0, (bitmap.shape[1] - 1) / 2.0),
        sy=sy, sx=sx,
        angle=rng.uniform(-0.18, 0.18),
        shear=rng.uniform(-0.15, 0.15),
        ty=rng.uniform(-2.5, 2.5), tx=rng.uniform(-2.5, 2.5),
    )
    soft = warp_affine(bitmap, inv, (DIGIT_SIZE, DIGIT_SIZE))
    lo = rng.uniform(0.18, 0.30)
    hi = lo + rng.uniform(0.25, 0.40)
    stroke = np.clip((soft - lo) / (hi - lo), 0.0, 1.0)
    return (stroke * rng.uniform(0.85, 1.0)).astype(np.float32)


def synthetic_digits(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced procedural digit set: uint8 images [count, 28, 28], labels [count]."""
    if count < 1:
        raise ConfigError("synthetic_digits: count must be positive")
    images = np.empty((count, DIGIT_SIZE, DIGIT_SIZE), dtype=np.uint8)
    labels = np.empty(count, dtype=np.uint8)
    for i in range(count):
        digit = i % 10
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, 0xD161]))
        images[i] = np.rint(render_digit(digit, rng) * 255.0).astype(np.uint8)
        labels[i] = digit
    return images, labels


def write_digit_idx(images: np.ndarray, labels: np.ndarray,
                    images_path: str | os.PathLike,
                    labels_path: str | os.PathLike) -> None:
    if images.ndim != 3 or images.dtype != np.uint8:
        raise FormatError("write_digit_idx: images must be uint8 [N, H, W]")
    if labels.shape != (images.shape[0],):
        raise FormatError("write_digit_idx: one label per image required")
    save_idx(images_path, images)
    save_idx(labels_path, labels.astype(np.uint8))


@dataclass(frozen=True)
class AugmentPolicy:
    rotation: float = 0.17          # radians, ~10 degrees
    translate_frac: float = 0.12    # of image side, stays below H/4
    scale_lo: float = 0.92
    scale_hi: float = 1.08
    noise_sigma: float = 0.02

    def check(self, side: int) -> None:
        if not 0 <= self.translate_frac < 0.25:
            raise ConfigError("AugmentPolicy: translation must stay below a "
                              "quarter of the image side")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ConfigError("AugmentPolicy: bad scale range")
        if self.noise_sigma < 0:
            raise ConfigError("AugmentPolicy: negative noise sigma")


def _augment_digit(alpha: np.ndarray, rng: np.random.Generator,
                   policy: AugmentPolicy) -> np.ndarray:
    side = alpha.shape[0]
    c = (side - 1) / 2.0
    s = rng.uniform(policy.scale_lo, policy.scale_hi)
    limit = policy.translate_frac * side
    inv = _affine_about(
        center_out=(c, c), center_in=(c, c), sy=s, sx=s,
        angle=rng.uniform(-policy.rotation, policy.rotation), shear=0.0,
        ty=rng.uniform(-limit, limit), tx=rng.uniform(-limit, limit),
    )
    return np.clip(warp_affine(alpha, inv, alpha.shape), 0.0, 1.0)


def digits_to_corpus(images: np.ndarray, labels: np.ndarray,
                     out_dir: str | os.PathLike, variations_per_scene: int,
                     seed: int, domain: str = "synthetic",
                     scene_id_offset: int = 0,
                     texture_pool: tuple[int, ...] | None = None,
                     policy: AugmentPolicy = AugmentPolicy()) -> Manifest:
    """Wrap digit images into a scene/variation corpus with textured
    backgrounds. Scene i is digit image i; its class tuple is (label,)."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise FormatError(f"digits_to_corpus: images must be [N, H, W], got {images.shape}")
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / 255.0
    if labels.shape != (images.shape[0],):
        raise FormatError("digits_to_corpus: one label per image required")
    side = images.shape[1]
    if images.shape[2] != side:
        raise FormatError("digits_to_corpus: images must be square")
    policy.check(side)
    if domain not in ("synthetic", "shifted"):
        raise ConfigError(f"digits_to_corpus: unknown domain {domain!r}")
    if texture_pool is None:
        texture_pool = TRAIN_TEXTURE_POOL if domain == "synthetic" else SHIFTED_TEXTURE_POOL
    if variations_per_scene < 1 or variations_per_scene > len(texture_pool):
        raise ConfigError(f"digits_to_corpus: need 1..{len(texture_pool)} variations, "
                          f"got {variations_per_scene}")

    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    manifest = Manifest(
        height=side, width=side, num_classes=10,
        num_scenes=images.shape[0], variations_per_scene=variations_per_scene,
        seed=seed,
    )
    for i in range(images.shape[0]):
        scene_id = scene_id_offset + i
        textures = variation_textures(seed, scene_id, texture_pool, variations_per_scene)
        base_alpha = np.clip(images[i].astype(np.float64), 0.0, 1.0)
        for v in range(variations_per_scene):
            rng = np.random.default_rng(np.random.SeedSequence([seed, scene_id, v, 0xA06]))
            alpha = base_alpha if v == 0 else _augment_digit(base_alpha, rng, policy)
            bg = render_background(textures[v], side, side)
            img = alpha + (1.0 - alpha) * bg.astype(np.float64)
            if v > 0 and policy.noise_sigma > 0:
                img = img + rng.normal(0.0, policy.noise_sigma, size=img.shape)
            img = np.clip(img, 0.0, 1.0).astype(np.float32)
            if domain == "shifted":
                img = photometric_shift(img, seed, scene_id, v)
            rel = f"images/s{scene_id:05d}_v{v}.pgm"
            write_pgm(os.path.join(out_dir, rel), img)
            manifest.records.append(ManifestRecord(
                scene_id=scene_id, variation_id=v, class_tuple=(int(labels[i]),),
                path=rel, domain_tag=domain,
            ))
    write_manifest(manifest, os.path.join(out_dir, "manifest.txt"))
    return manifest
