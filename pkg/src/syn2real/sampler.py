"""Training-pair and triplet sampling over a scene/variation corpus.

Three target regimes control what the decoder is asked to reconstruct:

    same       target is the input image itself
    variation  target is a different variation of the same scene
    scene      target is a different scene with the same class tuple

Triplets add a metric-learning constraint on top: anchor and positive are
different scenes of one class, the negative comes from another class, so the
three scenes are pairwise distinct. Every member carries its own
reconstruction target drawn under the active regime.

All randomness flows through an explicit numpy Generator, and every choice
is uniform over its candidate set, so any valid sample has positive
probability (the completeness tests rely on that). Unsatisfiable regimes are
rejected at construction with the offending scene or class named.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset.manifest import Manifest
from .errors import ConfigError

REGIMES = ("same", "variation", "scene")


@dataclass(frozen=True)
class ItemRef:
    scene_id: int
    variation_id: int


@dataclass(frozen=True)
class PairSample:
    source: ItemRef
    target: ItemRef


@dataclass(frozen=True)
class TripletSample:
    anchor: PairSample
    positive: PairSample
    negative: PairSample

    def members(self) -> tuple[PairSample, PairSample, PairSample]:
        return (self.anchor, self.positive, self.negative)


class SceneIndex:
    """Lookup tables from a manifest: scene -> variations, class -> scenes."""

    def __init__(self, manifest: Manifest):
        manifest.validate()
        self.variations: dict[int, tuple[int, ...]] = {}
        self.class_of: dict[int, tuple[int, ...]] = {}
        for r in manifest.records:
            self.variations.setdefault(r.scene_id, ())
            self.variations[r.scene_id] = tuple(sorted(
                set(self.variations[r.scene_id]) | {r.variation_id}))
            self.class_of[r.scene_id] = r.class_tuple
        self.scenes: tuple[int, ...] = tuple(sorted(self.variations))
        by_class: dict[tuple[int, ...], list[int]] = {}
        for sid in self.scenes:
            by_class.setdefault(self.class_of[sid], []).append(sid)
        self.scenes_by_class: dict[tuple[int, ...], tuple[int, ...]] = {
            cls: tuple(sorted(sids)) for cls, sids in by_class.items()}
        self.items: tuple[ItemRef, ...] = tuple(
            ItemRef(sid, v) for sid in self.scenes for v in self.variations[sid])

    def classes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(sorted(self.scenes_by_class))


class RegimeSampler:
    def __init__(self, index: SceneIndex, regime: str, triplets: bool = False):
        if regime not in REGIMES:
            raise ConfigError(f"sampler: unknown regime {regime!r}, expected one of {REGIMES}")
        if not index.scenes:
            raise ConfigError("sampler: empty corpus")
        self.index = index
        self.regime = regime
        self.triplets = triplets
        self._preflight()
        # flat views for uniform image-level draws
        self._items = index.items
        if triplets:
            self._items_by_other_class: dict[tuple[int, ...], tuple[ItemRef, ...]] = {}
            for cls in index.classes():
                self._items_by_other_class[cls] = tuple(
                    it for it in index.items if index.class_of[it.scene_id] != cls)

    def _preflight(self) -> None:
        idx = self.index
        if self.regime == "variation":
            for sid in idx.scenes:
                if len(idx.variations[sid]) < 2:
                    raise ConfigError(f"sampler: regime 'variation' needs >= 2 variations "
                                      f"per scene; scene {sid} has {len(idx.variations[sid])}")
        if self.regime == "scene" or self.triplets:
            for cls, sids in sorted(idx.scenes_by_class.items()):
                if len(sids) < 2:
                    what = "regime 'scene'" if self.regime == "scene" else "triplet sampling"
                    raise ConfigError(f"sampler: {what} needs >= 2 scenes per class; "
                                      f"class {cls} has {len(sids)}")
        if self.triplets and len(idx.scenes_by_class) < 2:
            raise ConfigError(f"sampler: triplet sampling needs >= 2 classes; corpus has "
                              f"{len(idx.scenes_by_class)}")

    # ---- draws ---------------------------------------------------------

    def _uniform_item(self, rng: np.random.Generator) -> ItemRef:
        return self._items[int(rng.integers(len(self._items)))]

    def _target_for(self, source: ItemRef, rng: np.random.Generator) -> ItemRef:
        idx = self.index
        if self.regime == "same":
            return source
        if self.regime == "variation":
            others = [v for v in idx.variations[source.scene_id] if v != source.variation_id]
            return ItemRef(source.scene_id, others[int(rng.integers(len(others)))])
        cls = idx.class_of[source.scene_id]
        candidates = [s for s in idx.scenes_by_class[cls] if s != source.scene_id]
        sid = candidates[int(rng.integers(len(candidates)))]
        vs = idx.variations[sid]
        return ItemRef(sid, vs[int(rng.integers(len(vs)))])

    def draw_pair(self, rng: np.random.Generator) -> PairSample:
        source = self._uniform_item(rng)
        return PairSample(source, self._target_for(source, rng))

    def draw_triplet(self, rng: np.random.Generator) -> TripletSample:
        if not self.triplets:
            raise ConfigError("sampler: draw_triplet on a sampler built without triplets")
        idx = self.index
        anchor = self._uniform_item(rng)
        cls = idx.class_of[anchor.scene_id]
        pos_scenes = [s for s in idx.scenes_by_class[cls] if s != anchor.scene_id]
        pos_sid = pos_scenes[int(rng.integers(len(pos_scenes)))]
        pos_vars = idx.variations[pos_sid]
        positive = ItemRef(pos_sid, pos_vars[int(rng.integers(len(pos_vars)))])
        negatives = self._items_by_other_class[cls]
        negative = negatives[int(rng.integers(len(negatives)))]
        return TripletSample(
            anchor=PairSample(anchor, self._target_for(anchor, rng)),
            positive=PairSample(positive, self._target_for(positive, rng)),
            negative=PairSample(negative, self._target_for(negative, rng)),
        )

    def pair_batch(self, rng: np.random.Generator, n: int) -> list[PairSample]:
        return [self.draw_pair(rng) for _ in range(n)]

    def triplet_batch(self, rng: np.random.Generator, n: int) -> list[TripletSample]:
        return [self.draw_triplet(rng) for _ in range(n)]


# ---- validation predicates (used by the test suite and debug tooling) ------

def pair_violations(index: SceneIndex, regime: str, sample: PairSample) -> list[str]:
    """Empty list iff the sample satisfies the regime's contract."""
    out = []
    s, t = sample.source, sample.target
    if s.scene_id not in index.variations:
        out.append(f"source scene {s.scene_id} not in corpus")
        return out
    if s.variation_id not in index.variations[s.scene_id]:
        out.append(f"source variation {s.variation_id} not in scene {s.scene_id}")
    if t.scene_id not in index.variations:
        out.append(f"target scene {t.scene_id} not in corpus")
        return out
    if t.variation_id not in index.variations[t.scene_id]:
        out.append(f"target variation {t.variation_id} not in scene {t.scene_id}")
    if regime == "same":
        if t != s:
            out.append("regime 'same': target differs from source")
    elif regime == "variation":
        if t.scene_id != s.scene_id:
            out.append("regime 'variation': target from a different scene")
        elif t.variation_id == s.variation_id:
            out.append("regime 'variation': target is the source variation")
    elif regime == "scene":
        if t.scene_id == s.scene_id:
            out.append("regime 'scene': target scene equals source scene")
        elif index.class_of[t.scene_id] != index.class_of[s.scene_id]:
            out.append("regime 'scene': target class differs from source class")
    else:
        out.append(f"unknown regime {regime!r}")
    return out


def triplet_violations(index: SceneIndex, regime: str, sample: TripletSample) -> list[str]:
    out = []
    a, p, n = (m.source for m in sample.members())
    scenes = (a.scene_id, p.scene_id, n.scene_id)
    if len(set(scenes)) != 3:
        out.append(f"triplet scenes not pairwise distinct: {scenes}")
    ca = index.class_of.get(a.scene_id)
    cp = index.class_of.get(p.scene_id)
    cn = index.class_of.get(n.scene_id)
    if ca != cp:
        out.append(f"anchor class {ca} != positive class {cp}")
    if ca == cn:
        out.append(f"negative class equals anchor class {ca}")
    for name, member in zip(("anchor", "positive", "negative"), sample.members()):
        for v in pair_violations(index, regime, member):
            out.append(f"{name}: {v}")
    return out
