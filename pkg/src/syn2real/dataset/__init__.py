"""Corpus tooling: image formats, manifests, and the two generators."""

from .generator import GeneratorConfig, generate, render_background, scene_params, shifted_config
from .idx import load_idx, save_idx
from .manifest import ImageSet, Manifest, ManifestRecord, read_manifest, split_scenes, write_manifest
from .mnist import AugmentPolicy, digits_to_corpus, synthetic_digits, write_digit_idx
from .pgm import read_pgm, write_pgm

__all__ = [
    "AugmentPolicy",
    "GeneratorConfig",
    "ImageSet",
    "Manifest",
    "ManifestRecord",
    "digits_to_corpus",
    "generate",
    "load_idx",
    "read_manifest",
    "read_pgm",
    "render_background",
    "save_idx",
    "scene_params",
    "shifted_config",
    "split_scenes",
    "synthetic_digits",
    "write_digit_idx",
    "write_manifest",
    "write_pgm",
]
