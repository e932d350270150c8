import math
import struct

import numpy as np
import pytest

from syn2real.autodiff import Tensor, backward, tensor_mean, square, sub
from syn2real.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from syn2real.dataset.generator import GeneratorConfig, generate
from syn2real.dataset.manifest import ImageSet
from syn2real.errors import ConfigError, FormatError, ShapeError
from syn2real.models import (EXTRACTOR_CHANNELS, EncoderModel, DecoderModel,
                             ExtractorConfig, ExtractorModel, FeatureCache,
                             ModelBundle, ModelGeometry, VARIANTS, build_bundle,
                             class_index_map, decode, encode, parse_variant,
                             pretrain_extractor, reparameterize, vae_forward)
from syn2real.optim import Adam, adam_step

G32 = ModelGeometry(height=32, width=32, latent_dim=10)
RNG = np.random.default_rng(0)
X32 = RNG.random((2, 1, 32, 32)).astype(np.float32)


def frozen_extractor(geometry=G32, seed=7, num_classes=4):
    ext = ExtractorModel(geometry, num_classes, seed)
    ext.freeze()
    ext.discard_head()
    return ext


class TestGeometry:
    def test_derived_dims_32(self):
        assert G32.feature_hw() == (4, 4)
        assert G32.feature_channels() == 64
        assert G32.n_upsample() == 3
        assert G32.base_hw() == (4, 4)

    def test_derived_dims_28(self):
        g = ModelGeometry(height=28, width=28)
        assert g.feature_hw() == (3, 3)
        assert g.n_upsample() == 2
        assert g.base_hw() == (7, 7)

    def test_odd_size_rejected(self):
        with pytest.raises(ConfigError, match="not divisible"):
            ModelGeometry(height=31, width=32).check()

    def test_too_small_rejected(self):
        with pytest.raises(ConfigError, match="collapses"):
            ModelGeometry(height=8, width=8).check()

    def test_bad_cut_index(self):
        with pytest.raises(ConfigError, match="cut_index"):
            ModelGeometry(height=32, width=32, cut_index=5).check()

    def test_dict_round_trip(self):
        g = ModelGeometry(height=28, width=28, latent_dim=64, cut_index=2)
        assert ModelGeometry.from_dict(g.to_dict()) == g


class TestInit:
    def test_deterministic(self):
        a = ExtractorModel(G32, 4, seed=5)
        b = ExtractorModel(G32, 4, seed=5)
        assert a.weight_digest() == b.weight_digest()
        c = ExtractorModel(G32, 4, seed=6)
        assert a.weight_digest() != c.weight_digest()

    def test_kaiming_bound_and_zero_bias(self):
        ext = ExtractorModel(G32, 4, seed=1)
        w = ext.params["block1.weight"].data
        fan_in = EXTRACTOR_CHANNELS[0] * 9
        assert np.abs(w).max() <= math.sqrt(6.0 / fan_in)
        assert np.all(ext.params["block1.bias"].data == 0.0)

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError, match=">= 2 classes"):
            ExtractorModel(G32, 1, seed=0)


class TestExtractor:
    def test_feature_and_logit_shapes(self):
        ext = ExtractorModel(G32, 4, seed=2)
        f = ext.features(Tensor(X32))
        assert f.data.shape == (2, 64, 4, 4)
        assert ext.logits(Tensor(X32)).data.shape == (2, 4)

    def test_discard_head_disables_logits(self):
        ext = ExtractorModel(G32, 4, seed=2)
        ext.discard_head()
        with pytest.raises(ConfigError, match="discarded"):
            ext.logits(Tensor(X32))
        assert ext.features(Tensor(X32)).data.shape == (2, 64, 4, 4)

    def test_freeze_marks_parameters(self):
        ext = ExtractorModel(G32, 4, seed=2)
        ext.freeze()
        assert ext.frozen
        assert all(not p.requires_grad for p in ext.parameters())
        out = ext.features(Tensor(X32))
        assert not out.requires_grad


class TestEncoderDecoder:
    def test_encoder_on_features(self):
        enc = EncoderModel(G32, seed=3, own_features=False, vae=False)
        feats = Tensor(RNG.random((2, 64, 4, 4)).astype(np.float32))
        assert enc.forward(feats).data.shape == (2, 10)

    def test_encoder_own_features(self):
        enc = EncoderModel(G32, seed=3, own_features=True, vae=False)
        assert enc.forward(Tensor(X32)).data.shape == (2, 10)

    def test_vae_heads(self):
        enc = EncoderModel(G32, seed=3, own_features=True, vae=True)
        mean, logvar = enc.forward(Tensor(X32))
        assert mean.data.shape == (2, 10)
        assert logvar.data.shape == (2, 10)

    def test_decoder_shape_and_range(self):
        dec = DecoderModel(G32, seed=4)
        z = Tensor(RNG.standard_normal((3, 10)).astype(np.float32))
        out = dec.forward(z)
        assert out.data.shape == (3, 1, 32, 32)
        assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    def test_decoder_28(self):
        g = ModelGeometry(height=28, width=28, latent_dim=6)
        dec = DecoderModel(g, seed=4)
        z = Tensor(RNG.standard_normal((2, 6)).astype(np.float32))
        assert dec.forward(z).data.shape == (2, 1, 28, 28)


class TestVariants:
    def test_every_variant_parses(self):
        for name in VARIANTS:
            spec = parse_variant(name)
            assert spec.name == name

    def test_mapping(self):
        assert parse_variant("AE") == parse_variant("AE")
        s = parse_variant("II-E-TAE")
        assert (s.arch, s.regime, s.triplets, s.vae, s.needs_extractor) == \
            ("E-TAE", "scene", True, False, True)
        s = parse_variant("I-E-AE")
        assert (s.arch, s.regime, s.triplets) == ("E-AE", "variation", False)
        s = parse_variant("E-TAE")
        assert (s.regime, s.triplets) == ("same", True)
        s = parse_variant("BETA-VAE")
        assert (s.arch, s.vae, s.needs_extractor) == ("VAE", True, False)
        assert parse_variant("AE").needs_extractor is False

    def test_unknown_variant(self):
        with pytest.raises(ConfigError, match="unknown variant"):
            parse_variant("E-AE-II")

    def test_bundle_extractor_rules(self):
        ext = frozen_extractor()
        with pytest.raises(ConfigError, match="requires an extractor"):
            build_bundle("E-AE", G32, seed=1)
        with pytest.raises(ConfigError, match="must not carry"):
            build_bundle("AE", G32, seed=1, extractor=ext)
        unfrozen = ExtractorModel(G32, 4, seed=7)
        with pytest.raises(ConfigError, match="frozen"):
            build_bundle("E-AE", G32, seed=1, extractor=unfrozen)

    def test_bundle_vae_flag_consistency(self):
        enc = EncoderModel(G32, seed=1, own_features=True, vae=False)
        dec = DecoderModel(G32, seed=1)
        with pytest.raises(ConfigError, match="vae flag"):
            ModelBundle("VAE", G32, enc, dec)


class TestEncodeDecode:
    def test_latent_shape_and_determinism(self):
        bundle = build_bundle("E-AE", G32, seed=9, extractor=frozen_extractor())
        z1 = encode(bundle, X32)
        z2 = encode(bundle, X32)
        assert z1.data.shape == (2, 10)
        assert np.array_equal(z1.data, z2.data)

    def test_shape_errors(self):
        bundle = build_bundle("AE", G32, seed=9)
        with pytest.raises(ShapeError, match="expected"):
            encode(bundle, X32[:, :, :16, :])
        with pytest.raises(ShapeError, match="expected"):
            decode(bundle, Tensor(np.zeros((2, 3), dtype=np.float32)))

    def test_forward_round_trip_shape(self):
        for variant in ("AE", "E-AE"):
            ext = frozen_extractor() if variant == "E-AE" else None
            bundle = build_bundle(variant, G32, seed=9, extractor=ext)
            out = bundle.forward(X32)
            assert out.data.shape == X32.shape
            assert np.all((out.data > 0) & (out.data < 1))

    def test_frozen_extractor_untouched_by_training_step(self):
        ext = frozen_extractor()
        digest_before = ext.weight_digest()
        bundle = build_bundle("E-AE", G32, seed=9, extractor=ext)
        opt = Adam(bundle.trainable_parameters(), lr=1e-2)
        target = Tensor(X32)
        for _ in range(3):
            loss = tensor_mean(square(sub(bundle.forward(X32), target)))
            backward(loss)
            opt.step()
            opt.zero_grad()
        assert ext.weight_digest() == digest_before
        assert all(p.grad is None for p in ext.parameters())

    def test_gradient_reaches_trainables(self):
        bundle = build_bundle("E-AE", G32, seed=9, extractor=frozen_extractor())
        loss = tensor_mean(square(sub(bundle.forward(X32), Tensor(X32))))
        backward(loss)
        grads = [p.grad for p in bundle.trainable_parameters()]
        assert all(g is not None for g in grads)
        assert any(np.abs(g).max() > 0 for g in grads)
        for p in bundle.trainable_parameters():
            p.grad = None


class TestVae:
    def test_reparameterize_collapsed_variance(self):
        mean = Tensor(np.array([[0.5, -1.2, 2.0]], dtype=np.float32))
        logvar = Tensor(np.full((1, 3), -40.0, dtype=np.float32))
        out = reparameterize(mean, logvar, np.random.default_rng(1))
        assert np.array_equal(out.data, mean.data)

    def test_same_rng_same_sample(self):
        bundle = build_bundle("VAE", G32, seed=2)
        _, _, s1, r1 = vae_forward(bundle, X32, np.random.default_rng(42))
        _, _, s2, r2 = vae_forward(bundle, X32, np.random.default_rng(42))
        assert np.array_equal(s1.data, s2.data)
        assert np.array_equal(r1.data, r2.data)

    def test_monte_carlo_mean(self):
        mean = Tensor(np.array([[0.3, -0.7]], dtype=np.float32))
        logvar = Tensor(np.array([[0.2, -0.5]], dtype=np.float32))
        rng = np.random.default_rng(3)
        draws = np.stack([reparameterize(mean, logvar, rng).data[0]
                          for _ in range(10_000)])
        sigma = np.exp(logvar.data[0] / 2.0)
        bound = 3.0 * sigma / math.sqrt(10_000)
        assert np.all(np.abs(draws.mean(axis=0) - mean.data[0]) < bound)

    def test_vae_forward_contract(self):
        bundle = build_bundle("VAE", G32, seed=2)
        mean, logvar, sample, recon = vae_forward(bundle, X32, np.random.default_rng(0))
        assert mean.data.shape == logvar.data.shape == sample.data.shape == (2, 10)
        assert recon.data.shape == X32.shape
        plain = build_bundle("AE", G32, seed=2)
        with pytest.raises(ConfigError, match="non-VAE"):
            vae_forward(plain, X32, np.random.default_rng(0))


class TestAdam:
    def test_lr_zero_is_identity(self):
        p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        raw = p.data.tobytes()
        opt = Adam([p], lr=0.0)
        for _ in range(5):
            p.grad = np.array([0.3, -0.1], dtype=np.float32)
            opt.step()
        assert p.data.tobytes() == raw

    def test_none_grad_leaves_param(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = Adam([p], lr=0.1)
        opt.step()
        assert p.data[0] == 1.0

    def test_first_step_magnitude(self):
        # g=1 at t=1: both moment estimates bias-correct to exactly 1,
        # so the step is lr / (1 + eps)
        param64 = np.array([0.0])
        new, m, v = adam_step(param64, np.array([1.0]), np.zeros(1), np.zeros(1),
                              t=1, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
        assert new[0] == pytest.approx(-1e-3 / (1.0 + 1e-8), rel=1e-12)
        assert m[0] == pytest.approx(0.1) and v[0] == pytest.approx(0.001)

    def test_deterministic_pair(self):
        def run():
            p = Tensor(np.array([0.5, 0.5], dtype=np.float32), requires_grad=True)
            opt = Adam([p], lr=1e-2)
            rng = np.random.default_rng(4)
            for _ in range(20):
                p.grad = rng.standard_normal(2).astype(np.float32)
                opt.step()
            return p.data.tobytes()
        assert run() == run()

    def test_quadratic_convergence(self):
        p = Tensor(np.array([3.0], dtype=np.float32), requires_grad=True)
        opt = Adam([p], lr=0.1)
        for _ in range(300):
            p.grad = 2.0 * p.data
            opt.step()
        assert abs(float(p.data[0])) < 1e-3

    def test_bad_config(self):
        p = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        with pytest.raises(ConfigError):
            Adam([p], lr=-1.0)
        with pytest.raises(ConfigError):
            Adam([p], beta1=1.0)


class TestFeatureCache:
    def test_matches_direct_and_memoizes(self):
        gen = GeneratorConfig(num_scenes=8, variations_per_scene=2, num_classes=4,
                              height=32, width=32, seed=3)
        generate(gen, "/tmp/s2r_cache_test")
        data = ImageSet.load("/tmp/s2r_cache_test/manifest.txt")
        ext = frozen_extractor()
        cache = FeatureCache(ext, data)
        refs = [(0, 0), (1, 1), (0, 0)]
        got = cache.features(refs)
        direct = ext.features(Tensor(np.stack([data.image(s, v) for s, v in refs]))).data
        assert np.array_equal(got, direct)
        assert len(cache._store) == 2
        flipped = cache.features([(0, 0)], flip=True)
        manual = ext.features(Tensor(
            np.ascontiguousarray(data.image(0, 0)[None, ..., ::-1]))).data
        assert np.array_equal(flipped, manual)
        assert len(cache._store) == 3

    def test_requires_frozen(self):
        gen = GeneratorConfig(num_scenes=4, variations_per_scene=1, num_classes=2,
                              height=32, width=32, seed=3)
        generate(gen, "/tmp/s2r_cache_test2")
        data = ImageSet.load("/tmp/s2r_cache_test2/manifest.txt")
        with pytest.raises(ConfigError, match="frozen"):
            FeatureCache(ExtractorModel(G32, 4, seed=0), data)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("pretrain")
    cfg = GeneratorConfig(num_scenes=48, variations_per_scene=2, num_classes=2,
                          height=16, width=16, seed=21)
    generate(cfg, out)
    return ImageSet.load(out / "manifest.txt")


class TestPretrain:
    def test_learns_above_chance_and_freezes(self, corpus):
        cfg = ExtractorConfig(epochs=10, batch_size=32, cut_index=3)
        model = pretrain_extractor(corpus, cfg, seed=5)
        assert model.frozen
        assert "head.weight" not in model.params
        assert model.holdout_accuracy is not None
        assert model.holdout_accuracy > 0.5

    def test_deterministic(self, corpus):
        cfg = ExtractorConfig(epochs=2, batch_size=32)
        a = pretrain_extractor(corpus, cfg, seed=5)
        b = pretrain_extractor(corpus, cfg, seed=5)
        assert a.weight_digest() == b.weight_digest()
        assert a.holdout_accuracy == b.holdout_accuracy

    def test_single_class_rejected(self, tmp_path):
        cfg = GeneratorConfig(num_scenes=6, variations_per_scene=1, num_classes=1,
                              height=16, width=16, seed=2)
        generate(cfg, tmp_path)
        data = ImageSet.load(tmp_path / "manifest.txt")
        with pytest.raises(ConfigError, match="need >= 2"):
            pretrain_extractor(data, ExtractorConfig(epochs=1), seed=0)

    def test_class_index_map(self):
        labels = np.array([[2], [0], [2], [1]])
        assert class_index_map(labels) == {(0,): 0, (1,): 1, (2,): 2}


class TestCheckpoint:
    def _bundle(self, variant="II-E-TAE"):
        ext = frozen_extractor() if parse_variant(variant).needs_extractor else None
        return build_bundle(variant, G32, seed=13, extractor=ext,
                            config={"kl_beta": 4.0} if variant == "VAE" else {"alpha": 0.5})

    @pytest.mark.parametrize("variant", ["AE", "VAE", "E-AE", "II-E-TAE"])
    def test_round_trip_forward_exact(self, variant, tmp_path):
        bundle = self._bundle(variant)
        path = tmp_path / "m.ckpt"
        save_checkpoint(bundle, path)
        loaded = load_checkpoint(path)
        assert loaded.variant == variant
        assert np.array_equal(bundle.forward(X32).data, loaded.forward(X32).data)

    def test_round_trip_preserves_metadata(self, tmp_path):
        bundle = self._bundle()
        bundle.extractor.holdout_accuracy = 0.625
        path = tmp_path / "m.ckpt"
        save_checkpoint(bundle, path)
        loaded = load_checkpoint(path)
        assert loaded.extractor.frozen
        assert loaded.extractor.holdout_accuracy == 0.625
        assert loaded.config == {"alpha": 0.5}
        assert loaded.config_hash == bundle.config_hash
        assert "head.weight" not in loaded.extractor.params

    def test_magic_present(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._bundle("AE"), path)
        assert path.read_bytes()[:4] == MAGIC

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._bundle("AE"), path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="bad magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._bundle("AE"), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version 99"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._bundle("AE"), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._bundle("AE"), path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(path)

    def test_shape_tamper(self, tmp_path):
        path = tmp_path / "m.ckpt"
        bundle = self._bundle("AE")
        save_checkpoint(bundle, path)
        blob = bytearray(path.read_bytes())
        # first tensor header: magic(4) version(4) count(4) name_len(4) name...
        name_len = struct.unpack_from("<I", blob, 12)[0]
        dims_at = 16 + name_len + 2
        first_dim = struct.unpack_from("<I", blob, dims_at)[0]
        # swap the first two extents; payload size stays identical
        second_dim = struct.unpack_from("<I", blob, dims_at + 4)[0]
        struct.pack_into("<II", blob, dims_at, second_dim, first_dim)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="shape"):
            load_checkpoint(path)
