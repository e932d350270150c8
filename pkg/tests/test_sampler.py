import numpy as np
import pytest

from syn2real.dataset.manifest import Manifest, ManifestRecord
from syn2real.errors import ConfigError
from syn2real.sampler import (REGIMES, ItemRef, RegimeSampler, SceneIndex,
                              pair_violations, triplet_violations)


def build_index(spec, num_classes):
    """spec: list of (scene_id, class_id, n_variations)."""
    records = []
    for sid, cls, nv in spec:
        for v in range(nv):
            records.append(ManifestRecord(
                scene_id=sid, variation_id=v, class_tuple=(cls,),
                path=f"images/s{sid:05d}_v{v}.pgm", domain_tag="synthetic"))
    m = Manifest(height=8, width=8, num_classes=num_classes,
                 num_scenes=len(spec), variations_per_scene=max(nv for _, _, nv in spec),
                 seed=0, records=tuple(records))
    return SceneIndex(m)


STANDARD = build_index(
    [(0, 0, 3), (1, 0, 3), (2, 1, 3), (3, 1, 3), (4, 2, 3), (5, 2, 3)],
    num_classes=3)


class TestIndex:
    def test_scenes_and_classes(self):
        assert STANDARD.scenes == (0, 1, 2, 3, 4, 5)
        assert STANDARD.scenes_by_class[(0,)] == (0, 1)
        assert STANDARD.scenes_by_class[(2,)] == (4, 5)
        assert STANDARD.class_of[3] == (1,)
        assert len(STANDARD.items) == 18

    def test_variations_sorted(self):
        assert STANDARD.variations[0] == (0, 1, 2)


class TestPairRegimes:
    @pytest.mark.parametrize("regime", REGIMES)
    def test_draws_are_sound(self, regime):
        sampler = RegimeSampler(STANDARD, regime)
        rng = np.random.default_rng(11)
        for _ in range(20_000):
            s = sampler.draw_pair(rng)
            v = pair_violations(STANDARD, regime, s)
            assert v == [], v

    def test_same_regime_identity(self):
        sampler = RegimeSampler(STANDARD, "same")
        rng = np.random.default_rng(0)
        for _ in range(100):
            s = sampler.draw_pair(rng)
            assert s.target == s.source

    def test_variation_regime_keeps_scene(self):
        sampler = RegimeSampler(STANDARD, "variation")
        rng = np.random.default_rng(1)
        for _ in range(500):
            s = sampler.draw_pair(rng)
            assert s.target.scene_id == s.source.scene_id
            assert s.target.variation_id != s.source.variation_id

    def test_scene_regime_keeps_class(self):
        sampler = RegimeSampler(STANDARD, "scene")
        rng = np.random.default_rng(2)
        for _ in range(500):
            s = sampler.draw_pair(rng)
            assert s.target.scene_id != s.source.scene_id
            assert (STANDARD.class_of[s.target.scene_id]
                    == STANDARD.class_of[s.source.scene_id])


class TestForcedChoices:
    def test_two_variations_forces_the_other(self):
        idx = build_index([(0, 0, 2), (1, 0, 2)], num_classes=1)
        sampler = RegimeSampler(idx, "variation")
        rng = np.random.default_rng(3)
        for _ in range(200):
            s = sampler.draw_pair(rng)
            assert s.target.variation_id == 1 - s.source.variation_id

    def test_two_scenes_forces_the_other(self):
        idx = build_index([(0, 0, 2), (1, 0, 2)], num_classes=1)
        sampler = RegimeSampler(idx, "scene")
        rng = np.random.default_rng(4)
        for _ in range(200):
            s = sampler.draw_pair(rng)
            assert s.target.scene_id == 1 - s.source.scene_id

    def test_minimal_triplet_corpus(self):
        idx = build_index([(0, 0, 1), (1, 0, 1), (2, 1, 1), (3, 1, 1)],
                          num_classes=2)
        sampler = RegimeSampler(idx, "same", triplets=True)
        rng = np.random.default_rng(5)
        for _ in range(200):
            t = sampler.draw_triplet(rng)
            a = t.anchor.source.scene_id
            assert t.positive.source.scene_id == a ^ 1
            assert (t.negative.source.scene_id // 2) != (a // 2)


class TestTriplets:
    @pytest.mark.parametrize("regime", REGIMES)
    def test_draws_are_sound(self, regime):
        index = STANDARD if regime != "variation" else STANDARD
        sampler = RegimeSampler(index, regime, triplets=True)
        rng = np.random.default_rng(7)
        for _ in range(20_000):
            t = sampler.draw_triplet(rng)
            v = triplet_violations(index, regime, t)
            assert v == [], v

    def test_triplet_requires_flag(self):
        sampler = RegimeSampler(STANDARD, "same")
        with pytest.raises(ConfigError, match="without triplets"):
            sampler.draw_triplet(np.random.default_rng(0))

    def test_batches(self):
        sampler = RegimeSampler(STANDARD, "scene", triplets=True)
        rng = np.random.default_rng(8)
        assert len(sampler.pair_batch(rng, 17)) == 17
        assert len(sampler.triplet_batch(rng, 9)) == 9


class TestCompleteness:
    """Every valid sample must be reachable (uniform support)."""

    def test_pair_support_variation(self):
        idx = build_index([(0, 0, 3), (1, 0, 2), (2, 1, 2)], num_classes=2)
        valid = set()
        for it in idx.items:
            for v in idx.variations[it.scene_id]:
                if v != it.variation_id:
                    valid.add((it, ItemRef(it.scene_id, v)))
        sampler = RegimeSampler(idx, "variation")
        rng = np.random.default_rng(9)
        seen = set()
        for _ in range(10_000):
            s = sampler.draw_pair(rng)
            seen.add((s.source, s.target))
        assert seen == valid

    def test_pair_support_scene(self):
        idx = build_index([(0, 0, 2), (1, 0, 2), (2, 0, 2), (3, 1, 2), (4, 1, 2)],
                          num_classes=2)
        valid = set()
        for it in idx.items:
            cls = idx.class_of[it.scene_id]
            for sid in idx.scenes_by_class[cls]:
                if sid == it.scene_id:
                    continue
                for v in idx.variations[sid]:
                    valid.add((it, ItemRef(sid, v)))
        sampler = RegimeSampler(idx, "scene")
        rng = np.random.default_rng(10)
        seen = set()
        for _ in range(20_000):
            s = sampler.draw_pair(rng)
            seen.add((s.source, s.target))
        assert seen == valid

    def test_triplet_scene_support(self):
        idx = build_index([(0, 0, 1), (1, 0, 1), (2, 1, 1), (3, 1, 1), (4, 2, 1), (5, 2, 1)],
                          num_classes=3)
        valid = set()
        for a in idx.scenes:
            ca = idx.class_of[a]
            for p in idx.scenes_by_class[ca]:
                if p == a:
                    continue
                for n in idx.scenes:
                    if idx.class_of[n] != ca:
                        valid.add((a, p, n))
        sampler = RegimeSampler(idx, "same", triplets=True)
        rng = np.random.default_rng(12)
        seen = set()
        for _ in range(20_000):
            t = sampler.draw_triplet(rng)
            seen.add((t.anchor.source.scene_id,
                      t.positive.source.scene_id,
                      t.negative.source.scene_id))
        assert seen == valid


class TestPreflight:
    def test_variation_regime_needs_two_variations(self):
        idx = build_index([(0, 0, 2), (7, 0, 1)], num_classes=1)
        with pytest.raises(ConfigError, match="scene 7 has 1"):
            RegimeSampler(idx, "variation")

    def test_scene_regime_needs_two_scenes_per_class(self):
        idx = build_index([(0, 0, 2), (1, 0, 2), (2, 1, 2)], num_classes=2)
        with pytest.raises(ConfigError, match=r"class \(1,\) has 1"):
            RegimeSampler(idx, "scene")

    def test_triplets_need_two_classes(self):
        idx = build_index([(0, 0, 2), (1, 0, 2)], num_classes=1)
        with pytest.raises(ConfigError, match="needs >= 2 classes"):
            RegimeSampler(idx, "same", triplets=True)

    def test_triplets_need_two_scenes_per_class(self):
        idx = build_index([(0, 0, 1), (1, 0, 1), (2, 1, 1)], num_classes=2)
        with pytest.raises(ConfigError, match=r"class \(1,\) has 1"):
            RegimeSampler(idx, "same", triplets=True)

    def test_unknown_regime(self):
        with pytest.raises(ConfigError, match="unknown regime"):
            RegimeSampler(STANDARD, "both")


class TestDeterminism:
    def test_same_seed_same_stream(self):
        sampler = RegimeSampler(STANDARD, "scene", triplets=True)
        a = sampler.triplet_batch(np.random.default_rng(77), 50)
        b = sampler.triplet_batch(np.random.default_rng(77), 50)
        assert a == b

    def test_different_seed_differs(self):
        sampler = RegimeSampler(STANDARD, "scene")
        a = sampler.pair_batch(np.random.default_rng(1), 50)
        b = sampler.pair_batch(np.random.default_rng(2), 50)
        assert a != b


class TestValidators:
    def test_pair_violation_detected(self):
        bad = STANDARD.items[0]
        from syn2real.sampler import PairSample
        s = PairSample(bad, ItemRef(bad.scene_id, bad.variation_id))
        assert pair_violations(STANDARD, "variation", s)

    def test_triplet_violation_detected(self):
        from syn2real.sampler import PairSample, TripletSample
        a = PairSample(ItemRef(0, 0), ItemRef(0, 0))
        p = PairSample(ItemRef(1, 0), ItemRef(1, 0))
        n = PairSample(ItemRef(2, 0), ItemRef(2, 0))
        good = TripletSample(a, p, n)
        assert triplet_violations(STANDARD, "same", good) == []
        bad = TripletSample(a, a, n)
        assert triplet_violations(STANDARD, "same", bad)

    def test_unknown_scene_reported(self):
        from syn2real.sampler import PairSample
        s = PairSample(ItemRef(99, 0), ItemRef(99, 0))
        assert "not in corpus" in pair_violations(STANDARD, "same", s)[0]
