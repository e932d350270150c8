"""Procedural corpus of flat shapes on textured backgrounds.

A scene is one foreground shape with fixed geometry and gray level; its
variations re-render the same shape over different backgrounds drawn without
replacement from the domain's texture pool. Class is determined by
scene_id % num_classes and selects the shape archetype, so classes are
balanced by construction.

Everything is a pure function of (seed, scene_id, variation_id, config):
per-scene randomness comes from SeedSequence([seed, scene_id]), per-variation
randomness from SeedSequence([seed, scene_id, variation_id, salt]). Rerunning
a generation writes byte-identical files.

The "shifted" domain models the synthetic-to-real gap: a disjoint texture
pool, a per-image photometric transform (gamma, gain, offset jitter) and
additive sensor noise. Foreground grays (0.65..1.0) stay above background
grays (<= 0.55) in both domains, so the class signal survives the shift while
low-level statistics move a lot.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError
from .manifest import Manifest, ManifestRecord, write_manifest
from .pgm import write_pgm

ARCHETYPES = ("disk", "box", "cross", "wedge")

TRAIN_TEXTURE_POOL = tuple(range(0, 48))
SHIFTED_TEXTURE_POOL = tuple(range(1000, 1048))

# photometric envelope of the shifted domain
SHIFT_GAMMA = (1.25, 1.45)
SHIFT_GAIN = (0.72, 0.84)
SHIFT_OFFSET = (0.12, 0.20)
SHIFT_NOISE_SIGMA = 0.04


@dataclass(frozen=True)
class SceneParams:
    scene_id: int
    class_index: int
    shape: str
    cy: float
    cx: float
    size: float
    angle: float
    fg_gray: float


@dataclass(frozen=True)
class GeneratorConfig:
    num_scenes: int
    variations_per_scene: int
    num_classes: int = 4
    height: int = 32
    width: int = 32
    seed: int = 0
    domain: str = "synthetic"
    scene_id_offset: int = 0
    texture_pool: tuple[int, ...] | None = None

    def resolved_pool(self) -> tuple[int, ...]:
        if self.texture_pool is not None:
            return self.texture_pool
        if self.domain == "synthetic":
            return TRAIN_TEXTURE_POOL
        if self.domain == "shifted":
            return SHIFTED_TEXTURE_POOL
        raise ConfigError(f"generator: unknown domain {self.domain!r}")

    def check(self) -> None:
        if self.num_scenes < 1:
            raise ConfigError("generator: num_scenes must be positive")
        if not 1 <= self.num_classes <= len(ARCHETYPES):
            raise ConfigError(f"generator: num_classes must be in [1, {len(ARCHETYPES)}]")
        if self.height < 16 or self.width < 16:
            raise ConfigError("generator: images below 16x16 leave no room for shapes")
        pool = self.resolved_pool()
        if self.variations_per_scene < 1:
            raise ConfigError("generator: variations_per_scene must be positive")
        if self.variations_per_scene > len(pool):
            raise ConfigError(f"generator: {self.variations_per_scene} variations need "
                              f"distinct textures but the pool has {len(pool)}")
        if len(set(pool)) != len(pool):
            raise ConfigError("generator: texture pool contains duplicates")


def scene_params(seed: int, scene_id: int, num_classes: int,
                 height: int, width: int) -> SceneParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, scene_id]))
    class_index = scene_id % num_classes
    shape = ARCHETYPES[class_index]
    short = min(height, width)
    return SceneParams(
        scene_id=scene_id,
        class_index=class_index,
        shape=shape,
        cy=height / 2.0 + rng.uniform(-0.12, 0.12) * height,
        cx=width / 2.0 + rng.uniform(-0.12, 0.12) * width,
        size=rng.uniform(0.24, 0.36) * short,
        angle=rng.uniform(0.0, 2.0 * np.pi),
        fg_gray=rng.uniform(0.65, 1.0),
    )


def render_mask(params: SceneParams, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dy = yy - params.cy
    dx = xx - params.cx
    ca, sa = np.cos(params.angle), np.sin(params.angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    r = params.size
    if params.shape == "disk":
        mask = dx * dx + dy * dy <= r * r
    elif params.shape == "box":
        mask = (np.abs(u) <= r * 0.82) & (np.abs(v) <= r * 0.82)
    elif params.shape == "cross":
        arm = r * 0.34
        mask = ((np.abs(u) <= arm) & (np.abs(v) <= r)) | \
               ((np.abs(v) <= arm) & (np.abs(u) <= r))
    elif params.shape == "wedge":
        mask = (v >= -0.55 * r) & (1.45 * np.abs(u) + v <= 0.85 * r)
    else:
        raise ConfigError(f"render_mask: unknown shape {params.shape!r}")
    return mask


def render_background(texture_id: int, height: int, width: int) -> np.ndarray:
    """Deterministic texture in [0.05, 0.55], one of five families."""
    rng = np.random.default_rng(np.random.SeedSequence([0xB6, texture_id, height, width]))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    kind = texture_id % 5
    if kind == 0:  # oriented sinusoid grating
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.08, 0.25)
        phase = rng.uniform(0, 2 * np.pi)
        img = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    elif kind == 1:  # two-tone checkerboard
        cell = int(rng.integers(2, 7))
        off_y, off_x = rng.integers(0, cell, size=2)
        img = (((yy + off_y) // cell + (xx + off_x) // cell) % 2)
        lo, hi = sorted(rng.uniform(0, 1, size=2))
        img = lo + img * (hi - lo)
    elif kind == 2:  # smooth value noise, bilinear upsampled coarse grid
        g = int(rng.integers(4, 8))
        coarse = rng.uniform(0, 1, size=(g, g))
        gy = np.linspace(0, g - 1, height)
        gx = np.linspace(0, g - 1, width)
        y0 = np.clip(gy.astype(int), 0, g - 2)
        x0 = np.clip(gx.astype(int), 0, g - 2)
        fy = (gy - y0)[:, None]
        fx = (gx - x0)[None, :]
        c00 = coarse[np.ix_(y0, x0)]
        c01 = coarse[np.ix_(y0, x0 + 1)]
        c10 = coarse[np.ix_(y0 + 1, x0)]
        c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
        img = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
               + c10 * fy * (1 - fx) + c11 * fy * fx)
    elif kind == 3:  # soft radial blobs
        img = np.zeros((height, width))
        for _ in range(int(rng.integers(3, 6))):
            by, bx = rng.uniform(0, height), rng.uniform(0, width)
            s = rng.uniform(0.12, 0.3) * min(height, width)
            img += np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * s * s))
        img /= max(img.max(), 1e-9)
    else:  # axis-aligned stripes with random duty cycle
        period = int(rng.integers(3, 9))
        duty = rng.uniform(0.3, 0.7)
        horizontal = rng.uniform() < 0.5
        coord = yy if horizontal else xx
        img = ((coord % period) < duty * period).astype(np.float64)
        lo, hi = sorted(rng.uniform(0, 1, size=2))
        img = lo + img * (hi - lo)
    return (0.05 + 0.50 * np.clip(img, 0.0, 1.0)).astype(np.float32)


def variation_textures(seed: int, scene_id: int, pool: tuple[int, ...], count: int) -> list[int]:
    """Distinct texture ids for one scene's variations (order matters)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, scene_id, 0x5E1]))
    picks = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in picks]


def photometric_shift(img: np.ndarray, seed: int, scene_id: int, variation_id: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, scene_id, variation_id, 0x5F7]))
    gamma = rng.uniform(*SHIFT_GAMMA)
    gain = rng.uniform(*SHIFT_GAIN)
    offset = rng.uniform(*SHIFT_OFFSET)
    noise = rng.normal(0.0, SHIFT_NOISE_SIGMA, size=img.shape)
    out = gain * np.power(np.clip(img, 0.0, 1.0), gamma) + offset + noise
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def render_image(config: GeneratorConfig, scene_id: int, variation_id: int) -> np.ndarray:
    params = scene_params(config.seed, scene_id, config.num_classes,
                          config.height, config.width)
    textures = variation_textures(config.seed, scene_id, config.resolved_pool(),
                                  config.variations_per_scene)
    bg = render_background(textures[variation_id], config.height, config.width)
    mask = render_mask(params, config.height, config.width)
    img = np.where(mask, np.float32(params.fg_gray), bg)
    if config.domain == "shifted":
        img = photometric_shift(img, config.seed, scene_id, variation_id)
    return img.astype(np.float32)


def generate(config: GeneratorConfig, out_dir: str | os.PathLike) -> Manifest:
    """Write the corpus (PGM files + manifest.txt) and return the manifest."""
    config.check()
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    manifest = Manifest(
        height=config.height, width=config.width, num_classes=config.num_classes,
        num_scenes=config.num_scenes, variations_per_scene=config.variations_per_scene,
        seed=config.seed,
    )
    for i in range(config.num_scenes):
        scene_id = config.scene_id_offset + i
        cls = scene_id % config.num_classes
        for v in range(config.variations_per_scene):
            rel = f"images/s{scene_id:05d}_v{v}.pgm"
            write_pgm(os.path.join(out_dir, rel), render_image(config, scene_id, v))
            manifest.records.append(ManifestRecord(
                scene_id=scene_id, variation_id=v, class_tuple=(cls,),
                path=rel, domain_tag=config.domain,
            ))
    write_manifest(manifest, os.path.join(out_dir, "manifest.txt"))
    return manifest


def shifted_config(base: GeneratorConfig, num_scenes: int | None = None,
                   scene_id_offset: int | None = None) -> GeneratorConfig:
    """Shifted-domain companion of a training config: fresh scene ids, the
    disjoint texture pool, same geometry and class count."""
    if scene_id_offset is None:
        scene_id_offset = base.scene_id_offset + base.num_scenes
        # align offset so scene_id % num_classes keeps classes balanced
        rem = scene_id_offset % base.num_classes
        if rem:
            scene_id_offset += base.num_classes - rem
    return replace(
        base,
        num_scenes=num_scenes if num_scenes is not None else base.num_scenes,
        domain="shifted",
        scene_id_offset=scene_id_offset,
        texture_pool=None,  # resolve to the disjoint shifted pool
    )
