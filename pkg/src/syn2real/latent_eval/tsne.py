"""Exact t-SNE: perplexity-calibrated Gaussians, Student-t low-dim kernel,
momentum gradient descent on the KL divergence. No Barnes-Hut approximation
and no early exaggeration; N stays small enough here that the O(N^2) passes
are cheap.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .embed import LatentPoint

_P_FLOOR = 1e-12


def _as_matrix(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return points.astype(np.float64)
    return np.stack([p.vector for p in points]).astype(np.float64)


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    s = (X * X).sum(axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _row_entropy(d2_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    w = np.exp(-d2_row * beta)
    z = w.sum()
    if z <= 0.0:
        return 0.0, np.zeros_like(w)
    p = w / z
    nz = p > 0
    h = float(-(p[nz] * np.log(p[nz])).sum())
    return h, p


def conditional_p(X: np.ndarray, perplexity: float,
                  tol: float = 1e-6, max_iter: int = 64) -> np.ndarray:
    """Per-row Gaussian affinities whose entropy matches log(perplexity)."""
    n = len(X)
    d2 = _pairwise_sq(X)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        lo, hi = 0.0, np.inf
        beta = 1.0
        h, p = _row_entropy(row, beta)
        for _ in range(max_iter):
            if abs(h - target) < tol:
                break
            if h > target:          # too flat, sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            h, p = _row_entropy(row, beta)
        P[i, np.arange(n) != i] = p
    return P


def joint_p(X: np.ndarray, perplexity: float) -> np.ndarray:
    n = len(X)
    pc = conditional_p(X, perplexity)
    P = (pc + pc.T) / (2.0 * n)
    P = np.maximum(P, _P_FLOOR)
    np.fill_diagonal(P, 0.0)
    return P / P.sum()


def tsne(points, perplexity: float = 30.0, iters: int = 500, seed: int = 0,
         learning_rate: float = 100.0,
         return_kl: bool = False):
    X = _as_matrix(points)
    n = len(X)
    if n < 2:
        raise ConfigError(f"tsne: need >= 2 points, got {n}")
    if perplexity >= n:
        raise ConfigError(f"tsne: perplexity {perplexity} >= point count {n}")
    P = joint_p(X, perplexity)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x75E]))
    Y = rng.standard_normal((n, 2)) * 1e-4
    V = np.zeros_like(Y)
    kls: list[float] = []
    mask = ~np.eye(n, dtype=bool)
    for t in range(iters):
        d2 = _pairwise_sq(Y)
        W = 1.0 / (1.0 + d2)
        np.fill_diagonal(W, 0.0)
        Q = np.maximum(W / W.sum(), _P_FLOOR)
        PQW = (P - Q) * W
        grad = 4.0 * (np.diag(PQW.sum(axis=1)) - PQW) @ Y
        momentum = 0.5 if t < 250 else 0.8
        V = momentum * V - learning_rate * grad
        Y = Y + V
        if return_kl:
            nz = mask & (P > _P_FLOOR)
            kls.append(float((P[nz] * np.log(P[nz] / Q[nz])).sum()))
    return (Y, kls) if return_kl else Y
