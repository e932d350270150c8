"""One-vs-rest linear SVM trained by full-batch subgradient descent.

No randomness: weights start at zero and every epoch uses the whole training
set, so fits are reproducible by construction. The step size decays as
lr / (1 + epoch), the classic Robbins-Monro schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .embed import LatentPoint


@dataclass(frozen=True)
class SvmModel:
    classes: tuple[tuple[int, ...], ...]
    weights: np.ndarray          # [C, D+1], last column is the bias
    objective_log: tuple[float, ...]


def _design(points: list[LatentPoint]) -> np.ndarray:
    X = np.stack([p.vector for p in points]).astype(np.float64)
    return np.hstack([X, np.ones((len(points), 1))])


def _objective(W: np.ndarray, X: np.ndarray, Y: np.ndarray, reg: float) -> float:
    margins = 1.0 - Y * (X @ W.T)
    hinge = np.maximum(margins, 0.0).mean(axis=0).sum()
    return float(hinge + 0.5 * reg * (W[:, :-1] ** 2).sum())


def linear_svm_fit(train: list[LatentPoint], epochs: int = 200,
                   lr: float = 0.5, reg: float = 1e-4) -> SvmModel:
    if not train:
        raise DataError("svm: empty training set")
    classes = tuple(sorted({p.class_tuple for p in train}))
    X = _design(train)
    n, d1 = X.shape
    Y = np.full((n, len(classes)), -1.0)
    cls_index = {cls: i for i, cls in enumerate(classes)}
    for i, p in enumerate(train):
        Y[i, cls_index[p.class_tuple]] = 1.0
    W = np.zeros((len(classes), d1))
    log = []
    for epoch in range(epochs):
        scores = X @ W.T
        viol = (Y * scores) < 1.0
        grad = -(viol * Y).T @ X / n
        grad[:, :-1] += reg * W[:, :-1]       # bias stays unregularized
        W = W - (lr / (1.0 + epoch)) * grad
        log.append(_objective(W, X, Y, reg))
    return SvmModel(classes=classes, weights=W, objective_log=tuple(log))


def linear_svm_predict(model: SvmModel,
                       query: list[LatentPoint]) -> tuple[list[tuple[int, ...]], float]:
    """Returns (predicted class tuples, accuracy in percent)."""
    if not query:
        raise DataError("svm: empty query set")
    X = _design(query)
    scores = X @ model.weights.T
    picks = np.argmax(scores, axis=1)
    preds = [model.classes[i] for i in picks]
    hits = sum(p == q.class_tuple for p, q in zip(preds, query))
    return preds, 100.0 * hits / len(query)
