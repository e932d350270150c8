"""Model family: frozen feature extractor, summarizer+MLP encoder, transposed-conv decoder.

Architecture is fixed by ModelGeometry and a handful of constants:

  extractor   4 blocks of conv3x3(pad 1) -> relu -> maxpool2, channels 16/32/64/64,
              with a linear classifier head used only during pretraining; features
              are exported after ``cut_index`` blocks
  encoder     optional trainable copy of the first ``cut_index`` extractor blocks
              (used when no extractor is attached), then a 1x1 conv down to 16
              channels, flatten, linear -> 256 -> relu -> linear -> D
  decoder     linear D -> 16*bh*bw, relu, reshape, then conv_transpose(k4 s2 p1)
              blocks doubling the spatial size up to the image, sigmoid output

All weights are Kaiming-uniform (bound sqrt(6/fan_in)), biases zero, drawn from
one seeded generator in construction order, so a (geometry, seed) pair fixes
every parameter bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, backward, conv2d, conv_transpose2d, linear,
                       max_pool2d, no_grad, relu, reshape, sigmoid, exp, mul,
                       add, narrow, softmax_cross_entropy)
from .dataset.manifest import ImageSet, split_scenes
from .errors import ConfigError, ShapeError
from .optim import Adam

EXTRACTOR_CHANNELS = (16, 32, 64, 64)

VARIANTS = ("AE", "VAE", "BETA-VAE",
            "E-AE", "I-E-AE", "II-E-AE",
            "E-TAE", "I-E-TAE", "II-E-TAE")


@dataclass(frozen=True)
class ModelGeometry:
    height: int
    width: int
    channels: int = 1
    latent_dim: int = 10
    cut_index: int = 3
    summary_channels: int = 16
    mlp_hidden: int = 256

    def check(self) -> None:
        for name in ("height", "width", "channels", "latent_dim",
                     "summary_channels", "mlp_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"geometry: {name} must be positive, got {getattr(self, name)}")
        if not 1 <= self.cut_index <= len(EXTRACTOR_CHANNELS):
            raise ConfigError(f"geometry: cut_index {self.cut_index} outside "
                              f"[1, {len(EXTRACTOR_CHANNELS)}]")
        h, w = self.block_hw(len(EXTRACTOR_CHANNELS))
        if h < 1 or w < 1:
            raise ConfigError(f"geometry: {self.height}x{self.width} collapses to "
                              f"{h}x{w} after {len(EXTRACTOR_CHANNELS)} blocks")
        self.n_upsample()

    def block_hw(self, n_blocks: int) -> tuple[int, int]:
        h, w = self.height, self.width
        for _ in range(n_blocks):
            h //= 2
            w //= 2
        return h, w

    def feature_hw(self) -> tuple[int, int]:
        return self.block_hw(self.cut_index)

    def feature_channels(self) -> int:
        return EXTRACTOR_CHANNELS[self.cut_index - 1]

    def n_upsample(self) -> int:
        for n in (3, 2, 1):
            if self.height % (1 << n) == 0 and self.width % (1 << n) == 0:
                return n
        raise ConfigError(f"geometry: image {self.height}x{self.width} not divisible "
                          f"by 2, cannot build an upsampling decoder")

    def base_hw(self) -> tuple[int, int]:
        n = self.n_upsample()
        return self.height >> n, self.width >> n

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width, "channels": self.channels,
                "latent_dim": self.latent_dim, "cut_index": self.cut_index,
                "summary_channels": self.summary_channels, "mlp_hidden": self.mlp_hidden}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelGeometry":
        return cls(**{k: int(v) for k, v in d.items()})


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _conv_pair(rng, params: dict, name: str, cout: int, cin: int, k: int) -> None:
    params[f"{name}.weight"] = Tensor(
        _kaiming(rng, (cout, cin, k, k), cin * k * k), requires_grad=True,
        name=f"{name}.weight")
    params[f"{name}.bias"] = Tensor(
        np.zeros(cout, dtype=np.float32), requires_grad=True, name=f"{name}.bias")


def _ct_pair(rng, params: dict, name: str, cin: int, cout: int, k: int) -> None:
    # transposed-conv kernels are [Cin, Cout, k, k]; fan-in counts the Cout side
    params[f"{name}.weight"] = Tensor(
        _kaiming(rng, (cin, cout, k, k), cout * k * k), requires_grad=True,
        name=f"{name}.weight")
    params[f"{name}.bias"] = Tensor(
        np.zeros(cout, dtype=np.float32), requires_grad=True, name=f"{name}.bias")


def _linear_pair(rng, params: dict, name: str, out_d: int, in_d: int) -> None:
    params[f"{name}.weight"] = Tensor(
        _kaiming(rng, (out_d, in_d), in_d), requires_grad=True, name=f"{name}.weight")
    params[f"{name}.bias"] = Tensor(
        np.zeros(out_d, dtype=np.float32), requires_grad=True, name=f"{name}.bias")


class ExtractorModel:
    """Convolutional classifier whose intermediate features feed the encoder."""

    def __init__(self, geometry: ModelGeometry, num_classes: int, seed: int):
        geometry.check()
        if num_classes < 2:
            raise ConfigError(f"extractor: needs >= 2 classes, got {num_classes}")
        self.geometry = geometry
        self.num_classes = num_classes
        self.cut_index = geometry.cut_index
        self.frozen = False
        self.holdout_accuracy: float | None = None
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xEC5]))
        self.params: dict[str, Tensor] = {}
        cin = geometry.channels
        for i, cout in enumerate(EXTRACTOR_CHANNELS):
            _conv_pair(rng, self.params, f"block{i}", cout, cin, 3)
            cin = cout
        fh, fw = geometry.block_hw(len(EXTRACTOR_CHANNELS))
        _linear_pair(rng, self.params, "head",
                     num_classes, EXTRACTOR_CHANNELS[-1] * fh * fw)

    def _run_blocks(self, x: Tensor, n_blocks: int) -> Tensor:
        for i in range(n_blocks):
            x = relu(conv2d(x, self.params[f"block{i}.weight"],
                            self.params[f"block{i}.bias"], stride=1, padding=1))
            x = max_pool2d(x, 2)
        return x

    def features(self, x: Tensor) -> Tensor:
        if self.frozen:
            with no_grad():
                return self._run_blocks(x, self.cut_index)
        return self._run_blocks(x, self.cut_index)

    def logits(self, x: Tensor) -> Tensor:
        if "head.weight" not in self.params:
            raise ConfigError("extractor: classifier head was discarded")
        h = self._run_blocks(x, len(EXTRACTOR_CHANNELS))
        n = h.data.shape[0]
        flat = reshape(h, (n, int(np.prod(h.data.shape[1:]))))
        return linear(flat, self.params["head.weight"], self.params["head.bias"])

    def freeze(self) -> None:
        for p in self.params.values():
            p.requires_grad = False
        self.frozen = True

    def discard_head(self) -> None:
        self.params.pop("head.weight", None)
        self.params.pop("head.bias", None)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def weight_digest(self) -> str:
        """sha256 over the raw bytes of every parameter, in name order."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()


class EncoderModel:
    def __init__(self, geometry: ModelGeometry, seed: int,
                 own_features: bool, vae: bool):
        geometry.check()
        self.geometry = geometry
        self.own_features = own_features
        self.vae = vae
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE4C]))
        self.params: dict[str, Tensor] = {}
        if own_features:
            cin = geometry.channels
            for i in range(geometry.cut_index):
                _conv_pair(rng, self.params, f"feat{i}",
                           EXTRACTOR_CHANNELS[i], cin, 3)
                cin = EXTRACTOR_CHANNELS[i]
        _conv_pair(rng, self.params, "summarizer",
                   geometry.summary_channels, geometry.feature_channels(), 1)
        fh, fw = geometry.feature_hw()
        flat = geometry.summary_channels * fh * fw
        _linear_pair(rng, self.params, "mlp1", geometry.mlp_hidden, flat)
        out_d = 2 * geometry.latent_dim if vae else geometry.latent_dim
        _linear_pair(rng, self.params, "mlp2", out_d, geometry.mlp_hidden)

    def forward(self, x: Tensor):
        """x is either raw images (own_features) or extractor features."""
        if self.own_features:
            for i in range(self.geometry.cut_index):
                x = relu(conv2d(x, self.params[f"feat{i}.weight"],
                                self.params[f"feat{i}.bias"], stride=1, padding=1))
                x = max_pool2d(x, 2)
        x = relu(conv2d(x, self.params["summarizer.weight"],
                        self.params["summarizer.bias"]))
        n = x.data.shape[0]
        x = reshape(x, (n, int(np.prod(x.data.shape[1:]))))
        x = relu(linear(x, self.params["mlp1.weight"], self.params["mlp1.bias"]))
        x = linear(x, self.params["mlp2.weight"], self.params["mlp2.bias"])
        if not self.vae:
            return x
        d = self.geometry.latent_dim
        return narrow(x, 1, 0, d), narrow(x, 1, d, d)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


class DecoderModel:
    def __init__(self, geometry: ModelGeometry, seed: int):
        geometry.check()
        self.geometry = geometry
        self.n_up = geometry.n_upsample()
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xDEC]))
        self.params: dict[str, Tensor] = {}
        bh, bw = geometry.base_hw()
        c0 = geometry.summary_channels
        _linear_pair(rng, self.params, "proj", c0 * bh * bw, geometry.latent_dim)
        for i in range(self.n_up):
            cout = c0 if i < self.n_up - 1 else geometry.channels
            _ct_pair(rng, self.params, f"up{i}", c0, cout, 4)

    def forward(self, z: Tensor) -> Tensor:
        g = self.geometry
        bh, bw = g.base_hw()
        n = z.data.shape[0]
        x = relu(linear(z, self.params["proj.weight"], self.params["proj.bias"]))
        x = reshape(x, (n, g.summary_channels, bh, bw))
        for i in range(self.n_up):
            x = conv_transpose2d(x, self.params[f"up{i}.weight"],
                                 self.params[f"up{i}.bias"], stride=2, padding=1)
            x = relu(x) if i < self.n_up - 1 else sigmoid(x)
        return x

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


@dataclass(frozen=True)
class VariantSpec:
    name: str
    arch: str            # AE | VAE | E-AE | E-TAE
    regime: str          # sampler regime for reconstruction targets
    triplets: bool
    vae: bool
    needs_extractor: bool


def parse_variant(name: str) -> VariantSpec:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    if name in ("VAE", "BETA-VAE"):
        return VariantSpec(name, "VAE", "same", False, True, False)
    if name == "AE":
        return VariantSpec(name, "AE", "same", False, False, False)
    if name.startswith("II-"):
        regime, core = "scene", name[3:]
    elif name.startswith("I-"):
        regime, core = "variation", name[2:]
    else:
        regime, core = "same", name
    return VariantSpec(name, core, regime, core == "E-TAE", False, True)


def config_digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class ModelBundle:
    def __init__(self, variant: str, geometry: ModelGeometry,
                 encoder: EncoderModel, decoder: DecoderModel,
                 extractor: ExtractorModel | None = None,
                 config: dict | None = None):
        spec = parse_variant(variant)
        if spec.needs_extractor and extractor is None:
            raise ConfigError(f"variant {variant} requires an extractor")
        if not spec.needs_extractor and extractor is not None:
            raise ConfigError(f"variant {variant} must not carry an extractor")
        if spec.vae != encoder.vae:
            raise ConfigError(f"variant {variant}: encoder vae flag is {encoder.vae}")
        if extractor is not None and not extractor.frozen:
            raise ConfigError("bundle extractor must be frozen")
        self.variant = variant
        self.spec = spec
        self.geometry = geometry
        self.encoder = encoder
        self.decoder = decoder
        self.extractor = extractor
        self.config = dict(config or {})
        self.config_hash = config_digest(
            {"variant": variant, "geometry": geometry.to_dict(), "config": self.config})

    def trainable_parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        if self.extractor is not None:
            out.extend((f"extractor.{k}", t) for k, t in self.extractor.params.items())
        out.extend((f"encoder.{k}", t) for k, t in self.encoder.params.items())
        out.extend((f"decoder.{k}", t) for k, t in self.decoder.params.items())
        return out

    def forward(self, images) -> Tensor:
        return decode(self, encode(self, images))


def build_bundle(variant: str, geometry: ModelGeometry, seed: int,
                 extractor: ExtractorModel | None = None,
                 config: dict | None = None) -> ModelBundle:
    spec = parse_variant(variant)
    encoder = EncoderModel(geometry, seed, own_features=not spec.needs_extractor,
                           vae=spec.vae)
    decoder = DecoderModel(geometry, seed)
    return ModelBundle(variant, geometry, encoder, decoder,
                       extractor=extractor, config=config)


def _as_batch(bundle: ModelBundle, images) -> Tensor:
    x = images if isinstance(images, Tensor) else Tensor(images)
    g = bundle.geometry
    if x.data.ndim != 4 or x.data.shape[1:] != (g.channels, g.height, g.width):
        raise ShapeError(f"encode: expected [N, {g.channels}, {g.height}, {g.width}], "
                         f"got {x.data.shape}")
    return x


def encode(bundle: ModelBundle, images) -> Tensor:
    """Deterministic latent: for VAE variants this is the mean head."""
    x = _as_batch(bundle, images)
    feats = bundle.extractor.features(x) if bundle.extractor is not None else x
    out = bundle.encoder.forward(feats)
    return out[0] if bundle.spec.vae else out


def decode(bundle: ModelBundle, latent: Tensor) -> Tensor:
    if latent.data.ndim != 2 or latent.data.shape[1] != bundle.geometry.latent_dim:
        raise ShapeError(f"decode: expected [N, {bundle.geometry.latent_dim}], "
                         f"got {latent.data.shape}")
    return bundle.decoder.forward(latent)


def reparameterize(mean: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    eps = Tensor(rng.standard_normal(mean.data.shape).astype(np.float32))
    return add(mean, mul(exp(mul(logvar, 0.5)), eps))


def vae_forward(bundle: ModelBundle, images, rng: np.random.Generator):
    if not bundle.spec.vae:
        raise ConfigError(f"vae_forward on non-VAE variant {bundle.variant}")
    x = _as_batch(bundle, images)
    mean, logvar = bundle.encoder.forward(x)
    sample = reparameterize(mean, logvar, rng)
    return mean, logvar, sample, bundle.decoder.forward(sample)


class FeatureCache:
    """Memoized frozen-extractor features for a fixed image set.

    Keys are (scene_id, variation_id, flipped, domain_tag); values are the
    [C, fh, fw] float32 feature maps. Misses are batched through one forward.
    """

    def __init__(self, extractor: ExtractorModel, image_set: ImageSet):
        if not extractor.frozen:
            raise ConfigError("FeatureCache requires a frozen extractor")
        self.extractor = extractor
        self.image_set = image_set
        self._domain = {(r.scene_id, r.variation_id): r.domain_tag
                        for r in image_set.manifest.records}
        self._store: dict[tuple, np.ndarray] = {}

    def features(self, refs: list[tuple[int, int]], flip: bool = False) -> np.ndarray:
        keys = [(s, v, flip, self._domain[(s, v)]) for s, v in refs]
        missing = [k for k in dict.fromkeys(keys) if k not in self._store]
        if missing:
            imgs = np.stack([self.image_set.image(k[0], k[1]) for k in missing])
            if flip:
                imgs = np.ascontiguousarray(imgs[..., ::-1])
            with no_grad():
                feats = self.extractor.features(Tensor(imgs)).data
            for k, f in zip(missing, feats):
                self._store[k] = f
        return np.stack([self._store[k] for k in keys])


@dataclass(frozen=True)
class ExtractorConfig:
    epochs: int = 12
    batch_size: int = 64
    learning_rate: float = 2e-3
    holdout_fraction: float = 0.1
    cut_index: int = 3
    augment_flips: bool = True


def class_index_map(labels: np.ndarray) -> dict[tuple[int, ...], int]:
    """Map each distinct class tuple to a dense index, sorted for determinism."""
    return {cls: i for i, cls in enumerate(sorted({tuple(row) for row in labels}))}


def pretrain_extractor(data: ImageSet | str, config: ExtractorConfig,
                       seed: int) -> ExtractorModel:
    """Train the classifier on a 90/10 scene split, freeze, drop the head.

    The held-out accuracy lands on ``model.holdout_accuracy``; scenes, not
    images, are split so no scene leaks between the two sides.
    """
    image_set = data if isinstance(data, ImageSet) else ImageSet.load(data)
    manifest = image_set.manifest
    cls_map = class_index_map(image_set.labels)
    if len(cls_map) < 2:
        raise ConfigError(f"pretrain: manifest has {len(cls_map)} class, need >= 2")
    geometry = ModelGeometry(height=manifest.height, width=manifest.width,
                             channels=image_set.images.shape[1],
                             cut_index=config.cut_index)
    model = ExtractorModel(geometry, len(cls_map), seed)
    train_scenes, hold_scenes = split_scenes(manifest.scene_ids(),
                                             config.holdout_fraction, seed)
    train_set, hold_set = set(train_scenes), set(hold_scenes)
    train_rows = np.array([i for i, r in enumerate(manifest.records)
                           if r.scene_id in train_set], dtype=np.int64)
    hold_rows = np.array([i for i, r in enumerate(manifest.records)
                          if r.scene_id in hold_set], dtype=np.int64)
    y = np.array([cls_map[tuple(row)] for row in image_set.labels], dtype=np.int64)

    opt = Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE00]))
    for _ in range(config.epochs):
        order = train_rows[rng.permutation(len(train_rows))]
        for lo in range(0, len(order), config.batch_size):
            rows = order[lo:lo + config.batch_size]
            batch = image_set.images[rows]
            if config.augment_flips:
                # mirror a random half of the batch; classes are mirror-stable
                flip = rng.random(len(rows)) < 0.5
                batch = batch.copy()
                batch[flip] = batch[flip][..., ::-1]
            loss = softmax_cross_entropy(model.logits(Tensor(batch)), y[rows])
            backward(loss)
            opt.step()
            opt.zero_grad()

    correct = 0
    with no_grad():
        for lo in range(0, len(hold_rows), config.batch_size):
            rows = hold_rows[lo:lo + config.batch_size]
            pred = np.argmax(model.logits(Tensor(image_set.images[rows])).data, axis=1)
            correct += int(np.sum(pred == y[rows]))
    model.holdout_accuracy = correct / max(1, len(hold_rows))
    model.freeze()
    model.discard_head()
    return model
