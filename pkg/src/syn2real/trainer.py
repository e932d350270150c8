"""Training loop over the model family.

One epoch is ceil(num_images / batch_size) sampler draws with replacement.
Triplet variants draw batch_size // 3 triplets per step so the member count
stays close to the configured batch. Loss bookkeeping follows

    total = alpha * L_triplet + beta * sum(L_recon members) + kl_beta * KL

and every logged epoch satisfies that identity to 1e-5 by construction, since
the logged components are per-step means of the same scalars that built the
step losses.

Metrics are written without wall-clock columns so a (config, seed) pair fixes
the CSV byte-for-byte; per-epoch timings go to a sidecar file instead.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, backward, narrow, no_grad
from .checkpoint import save_checkpoint
from .dataset.manifest import ImageSet
from .errors import ConfigError, NumericError
from .latent_eval.embed import embed
from .latent_eval.knn import KnnConfig, knn_classify
from .losses import bce_loss, kl_loss, ssim, ssim_loss, total_loss, triplet_loss
from .models import (ExtractorConfig, ExtractorModel, FeatureCache,
                     ModelBundle, ModelGeometry, build_bundle, parse_variant,
                     pretrain_extractor, reparameterize)
from .optim import Adam

RECON_KINDS = ("bce", "ssim")

METRIC_FIELDS = ("epoch", "total", "recon_sum", "triplet", "kl",
                 "train_ssim", "shifted_knn")


@dataclass(frozen=True)
class TrainConfig:
    variant: str
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    kl_beta: float = 4.0
    margin: float = 0.2
    recon_kind: str = "bce"
    latent_dim: int = 10
    eval_every: int = 10
    eval_subset: int = 256
    pretrain_epochs: int = 12

    def check(self) -> None:
        parse_variant(self.variant)
        if self.epochs < 1:
            raise ConfigError(f"train: epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train: batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"train: negative learning rate {self.learning_rate}")
        if self.recon_kind not in RECON_KINDS:
            raise ConfigError(f"train: recon_kind {self.recon_kind!r} not in {RECON_KINDS}")
        if self.latent_dim < 1:
            raise ConfigError(f"train: latent_dim must be >= 1, got {self.latent_dim}")
        if self.eval_every < 1:
            raise ConfigError(f"train: eval_every must be >= 1, got {self.eval_every}")
        if self.eval_subset < 1:
            raise ConfigError(f"train: eval_subset must be >= 1, got {self.eval_subset}")
        for name in ("alpha", "beta", "kl_beta", "margin"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train: {name} must be >= 0")


class MetricsLog:
    """Append-only per-epoch rows with a deterministic CSV rendering."""

    def __init__(self):
        self.rows: list[dict] = []

    def append(self, **row) -> None:
        if set(row) != set(METRIC_FIELDS):
            raise ConfigError(f"metrics row fields {sorted(row)} != {sorted(METRIC_FIELDS)}")
        self.rows.append(row)

    def to_csv_text(self) -> str:
        lines = [",".join(METRIC_FIELDS)]
        for row in self.rows:
            cells = []
            for name in METRIC_FIELDS:
                v = row[name]
                if v is None:
                    cells.append("")
                elif name == "epoch":
                    cells.append(str(v))
                else:
                    cells.append(repr(float(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]


def _load(data) -> ImageSet:
    return data if isinstance(data, ImageSet) else ImageSet.load(data)


class _Batcher:
    """Assembles encoder inputs and reconstruction targets for sampled refs."""

    def __init__(self, bundle: ModelBundle, data: ImageSet,
                 cache: FeatureCache | None):
        self.bundle = bundle
        self.data = data
        self.cache = cache

    def encoder_input(self, refs: list[tuple[int, int]]) -> Tensor:
        if self.cache is not None:
            return Tensor(self.cache.features(refs))
        return Tensor(np.stack([self.data.image(s, v) for s, v in refs]))

    def images(self, refs: list[tuple[int, int]]) -> Tensor:
        return Tensor(np.stack([self.data.image(s, v) for s, v in refs]))


def _recon_loss(kind: str, pred: Tensor, target: Tensor) -> Tensor:
    return bce_loss(pred, target) if kind == "bce" else ssim_loss(pred, target)


def _encode_out(bundle: ModelBundle, batcher: _Batcher, refs):
    x = batcher.encoder_input(refs)
    if bundle.extractor is not None and batcher.cache is None:
        x = bundle.extractor.features(x)
    return bundle.encoder.forward(x)


def train(config: TrainConfig, train_data, shifted_data=None,
          out_dir: str | os.PathLike | None = None,
          extractor: ExtractorModel | None = None) -> tuple[ModelBundle, MetricsLog]:
    from .sampler import RegimeSampler, SceneIndex

    config.check()
    spec = parse_variant(config.variant)
    train_set = _load(train_data)
    shifted_set = _load(shifted_data) if shifted_data is not None else None
    manifest = train_set.manifest

    geometry = ModelGeometry(height=manifest.height, width=manifest.width,
                             channels=train_set.images.shape[1],
                             latent_dim=config.latent_dim)
    if spec.needs_extractor and extractor is None:
        extractor = pretrain_extractor(
            train_set,
            ExtractorConfig(epochs=config.pretrain_epochs,
                            cut_index=geometry.cut_index),
            config.seed)
    if extractor is not None and spec.needs_extractor:
        if (extractor.geometry.height, extractor.geometry.width) != \
                (geometry.height, geometry.width):
            raise ConfigError(f"train: extractor geometry "
                              f"{extractor.geometry.height}x{extractor.geometry.width} "
                              f"does not match corpus {geometry.height}x{geometry.width}")

    bundle = build_bundle(config.variant, geometry, config.seed,
                          extractor=extractor if spec.needs_extractor else None,
                          config=asdict(config))

    # sampler preflight happens here, before any epoch runs
    index = SceneIndex(manifest)
    sampler = RegimeSampler(index, spec.regime, triplets=spec.triplets)

    cache = None
    shifted_cache = None
    if bundle.extractor is not None:
        cache = FeatureCache(bundle.extractor, train_set)
        if shifted_set is not None:
            shifted_cache = FeatureCache(bundle.extractor, shifted_set)
    batcher = _Batcher(bundle, train_set, cache)

    opt = Adam(bundle.trainable_parameters(), lr=config.learning_rate,
               beta1=config.adam_beta1, beta2=config.adam_beta2,
               eps=config.adam_eps)
    sample_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5A01]))
    model_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7AE]))
    eval_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE7A]))

    n_images = len(manifest.records)
    steps_per_epoch = math.ceil(n_images / config.batch_size)
    triplets_per_step = max(1, config.batch_size // 3)
    eval_rows = eval_rng.choice(n_images, size=min(config.eval_subset, n_images),
                                replace=False)
    eval_rows.sort()

    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    log = MetricsLog()
    timings: list[tuple[int, float]] = []
    best_acc = -1.0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sums = {"total": 0.0, "recon_sum": 0.0, "triplet": 0.0, "kl": 0.0}
        for step in range(steps_per_epoch):
            try:
                parts = _train_step(config, spec, bundle, sampler, batcher,
                                    sample_rng, model_rng, triplets_per_step)
            except NumericError as exc:
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"({config.variant}, seed {config.seed}): {exc}") from exc
            for key, value in parts.items():
                sums[key] += value
            backward(parts.pop("_graph")) if False else None
            opt.step()
            opt.zero_grad()
        means = {k: v / steps_per_epoch for k, v in sums.items()}
        train_ssim = _subset_ssim(bundle, train_set, eval_rows)
        shifted_acc = None
        last_epoch = epoch == config.epochs - 1
        if shifted_set is not None and ((epoch + 1) % config.eval_every == 0
                                        or last_epoch):
            shifted_acc = _shifted_knn(bundle, train_set, shifted_set,
                                       cache, shifted_cache)
            if out_dir is not None and shifted_acc > best_acc:
                best_acc = shifted_acc
                save_checkpoint(bundle, os.path.join(out_dir, "checkpoints",
                                                     "best.ckpt"))
        log.append(epoch=epoch, total=means["total"],
                   recon_sum=means["recon_sum"], triplet=means["triplet"],
                   kl=means["kl"], train_ssim=train_ssim,
                   shifted_knn=shifted_acc)
        timings.append((epoch, time.perf_counter() - t0))

    if out_dir is not None:
        save_checkpoint(bundle, os.path.join(out_dir, "checkpoints", "final.ckpt"))
        log.write(os.path.join(out_dir, "metrics.csv"))
        with open(os.path.join(out_dir, "metrics_timing.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write("epoch,seconds\n")
            for ep, sec in timings:
                fh.write(f"{ep},{sec:.3f}\n")
    return bundle, log


def _train_step(config, spec, bundle, sampler, batcher, sample_rng, model_rng,
                triplets_per_step) -> dict:
    """Runs forward+backward for one step, returns the scalar components."""
    if spec.triplets:
        trips = sampler.triplet_batch(sample_rng, triplets_per_step)
        t = len(trips)
        members = [m for trip in trips for m in trip.members()]
        src = [(m.source.scene_id, m.source.variation_id) for m in members]
        tgt = [(m.target.scene_id, m.target.variation_id) for m in members]
        # members are laid out anchor block, positive block, negative block
        src = src[0::3] + src[1::3] + src[2::3]
        tgt = tgt[0::3] + tgt[1::3] + tgt[2::3]
        z = _encode_out(bundle, batcher, src)
        za, zp, zn = (narrow(z, 0, i * t, t) for i in range(3))
        trip_loss = triplet_loss(za, zp, zn, margin=config.margin)
        recon = bundle.decoder.forward(z)
        targets = batcher.images(tgt)
        recon_losses = [
            _recon_loss(config.recon_kind,
                        narrow(recon, 0, i * t, t), narrow(targets, 0, i * t, t))
            for i in range(3)]
        total = total_loss(recon_losses, triplet=trip_loss, kl=None,
                           alpha=config.alpha, beta=config.beta,
                           kl_beta=config.kl_beta)
        parts = {"total": float(total.data),
                 "recon_sum": float(sum(r.data for r in recon_losses)),
                 "triplet": float(trip_loss.data), "kl": 0.0}
    else:
        pairs = sampler.pair_batch(sample_rng, config.batch_size)
        src = [(p.source.scene_id, p.source.variation_id) for p in pairs]
        tgt = [(p.target.scene_id, p.target.variation_id) for p in pairs]
        out = _encode_out(bundle, batcher, src)
        kl = None
        if spec.vae:
            mean, logvar = out
            z = reparameterize(mean, logvar, model_rng)
            kl = kl_loss(mean, logvar)
        else:
            z = out
        recon = bundle.decoder.forward(z)
        targets = batcher.images(tgt)
        r_loss = _recon_loss(config.recon_kind, recon, targets)
        total = total_loss([r_loss], triplet=None, kl=kl,
                           alpha=config.alpha, beta=config.beta,
                           kl_beta=config.kl_beta)
        parts = {"total": float(total.data), "recon_sum": float(r_loss.data),
                 "triplet": 0.0, "kl": 0.0 if kl is None else float(kl.data)}
    backward(total)
    return parts


def _subset_ssim(bundle: ModelBundle, data: ImageSet, rows: np.ndarray,
                 batch: int = 128) -> float:
    total = 0.0
    with no_grad():
        for lo in range(0, len(rows), batch):
            chunk = data.images[rows[lo:lo + batch]]
            recon = bundle.forward(chunk)
            score = ssim(recon, Tensor(chunk))
            total += float(score.data) * len(chunk)
    return total / len(rows)


def _shifted_knn(bundle, train_set, shifted_set, cache, shifted_cache) -> float:
    train_pts = embed(bundle, train_set, include_flips=True, cache=cache)
    query_pts = embed(bundle, shifted_set, include_flips=True, cache=shifted_cache)
    _, acc = knn_classify(train_pts, query_pts, KnnConfig(k="auto"))
    return acc


def evaluate_reconstruction(bundle: ModelBundle, data, reference: str = "input",
                            batch: int = 128) -> dict:
    """Per-image SSIM stats against the input or the scene's variation 0.

    When the bundle carries an extractor, also reports the mean L2 distance
    between extractor features of reconstruction and reference ("feat_l2"),
    the stand-in for a perceptual metric.
    """
    if reference not in ("input", "scene_canonical"):
        raise ConfigError(f"evaluate_reconstruction: unknown reference {reference!r}")
    image_set = _load(data)
    rows = np.arange(len(image_set.manifest.records))
    scores = []
    feat_l2 = []
    with no_grad():
        for lo in range(0, len(rows), batch):
            chunk_rows = rows[lo:lo + batch]
            inputs = image_set.images[chunk_rows]
            if reference == "input":
                refs = inputs
            else:
                refs = np.stack([
                    image_set.image(image_set.manifest.records[i].scene_id, 0)
                    for i in chunk_rows])
            recon = bundle.forward(inputs)
            per_image = ssim(recon, Tensor(refs), reduce="image")
            scores.append(per_image.data)
            if bundle.extractor is not None:
                fr = bundle.extractor.features(recon).data
                ft = bundle.extractor.features(Tensor(refs)).data
                diff = (fr.astype(np.float64) - ft.astype(np.float64))
                feat_l2.append(np.sqrt((diff ** 2).sum(axis=(1, 2, 3))))
    per_image = np.concatenate(scores)
    out = {"n": int(len(per_image)),
           "reference": reference,
           "ssim_mean": float(per_image.mean()),
           "ssim_std": float(per_image.std())}
    if feat_l2:
        all_l2 = np.concatenate(feat_l2)
        out["feat_l2_mean"] = float(all_l2.mean())
        out["feat_l2_std"] = float(all_l2.std())
    return out
