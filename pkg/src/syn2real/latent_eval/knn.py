"""Brute-force KNN over latent points, with a fully specified tie-break chain.

Neighbors are ranked by (L2 distance, train index) so equal distances resolve
to the earlier point. The vote is a majority over class tuples; vote ties go
to the class with the smaller mean distance among its voting neighbors, and
a residual tie to the lexicographically smaller class tuple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .embed import LatentPoint


@dataclass(frozen=True)
class KnnConfig:
    k: int | str = "auto"


def auto_k(n: int) -> int:
    return int(round(math.sqrt(n)))


def _resolve_k(cfg: KnnConfig, n: int) -> int:
    k = auto_k(n) if cfg.k == "auto" else int(cfg.k)
    if k < 1:
        raise DataError(f"knn: k must be >= 1, got {k}")
    if k > n:
        raise DataError(f"knn: k={k} exceeds the {n}-point training set")
    return k


def _vote(classes: list[tuple[int, ...]], dists: np.ndarray) -> tuple[int, ...]:
    counts: dict[tuple[int, ...], int] = {}
    for cls in classes:
        counts[cls] = counts.get(cls, 0) + 1
    best = max(counts.values())
    tied = [cls for cls, c in counts.items() if c == best]
    if len(tied) == 1:
        return tied[0]
    means = {cls: float(np.mean([d for c, d in zip(classes, dists) if c == cls]))
             for cls in tied}
    return min(tied, key=lambda cls: (means[cls], cls))


def knn_classify(train: list[LatentPoint], query: list[LatentPoint],
                 cfg: KnnConfig = KnnConfig()) -> tuple[list[tuple[int, ...]], float]:
    """Returns (predicted class tuples, accuracy in percent)."""
    if not train:
        raise DataError("knn: empty training set")
    if not query:
        raise DataError("knn: empty query set")
    k = _resolve_k(cfg, len(train))
    X = np.stack([p.vector for p in train]).astype(np.float64)
    Q = np.stack([p.vector for p in query]).astype(np.float64)
    labels = [p.class_tuple for p in train]
    # squared distances via the expansion; tiny negatives from cancellation -> 0
    d2 = np.maximum(
        (Q * Q).sum(axis=1)[:, None] + (X * X).sum(axis=1)[None, :] - 2.0 * Q @ X.T,
        0.0)
    idx = np.arange(len(train))
    preds = []
    for row in d2:
        order = np.lexsort((idx, row))[:k]
        dists = np.sqrt(row[order])
        preds.append(_vote([labels[i] for i in order], dists))
    hits = sum(p == q.class_tuple for p, q in zip(preds, query))
    return preds, 100.0 * hits / len(query)
