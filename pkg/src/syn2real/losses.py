"""Differentiable losses: SSIM and BCE reconstruction, triplet hinge, KL.

All functions take rank-checked tensors and return scalar Tensors wired into
the tape. Images are assumed to live in [0, 1]; the SSIM constants are the
standard ones for that dynamic range (C1 = 0.01^2, C2 = 0.03^2) with an
11x11 Gaussian window, sigma 1.5, valid padding.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _gaussian_window(dtype) -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-((np.arange(SSIM_WINDOW) - half) ** 2) / (2.0 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    return w.reshape(1, 1, SSIM_WINDOW, SSIM_WINDOW).astype(dtype)


def _check_image_pair(pred: Tensor, target: Tensor, op: str) -> None:
    if pred.data.ndim != 4 or target.data.ndim != 4:
        raise ShapeError(f"{op}: expected [N, C, H, W] tensors, got "
                         f"{pred.data.shape} and {target.data.shape}")
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"{op}: shape mismatch {pred.data.shape} vs {target.data.shape}")
    if pred.data.dtype != target.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {pred.data.dtype} vs {target.data.dtype}")


def ssim(pred: Tensor, target: Tensor, reduce: str = "mean") -> Tensor:
    """SSIM over all windows, channels treated independently.

    Identical inputs score exactly 1 (the map is a ratio of equal products).
    Needs H, W >= 11 for at least one valid window position. reduce picks
    the output: "mean" collapses to a scalar, "image" to one value per image.
    """
    _check_image_pair(pred, target, "ssim")
    if reduce not in ("mean", "image"):
        raise ShapeError(f"ssim: unknown reduce {reduce!r}")
    n, c, h, w = pred.data.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the {SSIM_WINDOW}x"
                         f"{SSIM_WINDOW} window")
    win = Tensor(_gaussian_window(pred.data.dtype))
    x = pred.reshape(n * c, 1, h, w)
    y = target.reshape(n * c, 1, h, w)
    mu_x = ad.conv2d(x, win)
    mu_y = ad.conv2d(y, win)
    mu_xx = mu_x.square()
    mu_yy = mu_y.square()
    mu_xy = mu_x * mu_y
    var_x = ad.conv2d(x.square(), win) - mu_xx
    var_y = ad.conv2d(y.square(), win) - mu_yy
    cov = ad.conv2d(x * y, win) - mu_xy
    lum = (mu_xy * 2.0 + _C1)
    con = (cov * 2.0 + _C2)
    denom = (mu_xx + mu_yy + _C1) * (var_x + var_y + _C2)
    score = ad.div(lum * con, denom)
    if reduce == "mean":
        return score.mean()
    per_image = score.reshape(n, score.data.size // n)
    return ad.tensor_mean(per_image, axis=1)


def ssim_loss(pred: Tensor, target: Tensor) -> Tensor:
    """1 - ssim; zero iff the images agree on every window statistic."""
    return 1.0 - ssim(pred, target)


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].

    Targets may be any values in [0, 1]; they carry no gradient here even if
    they require grad elsewhere (reconstruction targets are data).
    """
    _check_image_pair(pred, target, "bce_loss")
    if np.any(target.data < 0) or np.any(target.data > 1):
        raise ShapeError("bce_loss: targets must lie in [0, 1]")
    p = ad.clamp(pred, 1e-7, 1.0 - 1e-7)
    t = target.detach()
    ll = t * ad.log(p) + (1.0 - t) * ad.log(1.0 - p)
    return -ll.mean()


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor,
                 margin: float = 0.2) -> Tensor:
    """Squared-distance triplet hinge, mean over the batch.

    per row:  max(0, ||z_a - z_p||^2 - ||z_a - z_n||^2 + margin)
    """
    for name, t in (("anchor", anchor), ("positive", positive), ("negative", negative)):
        if t.data.ndim != 2:
            raise ShapeError(f"triplet_loss: {name} must be [N, D], got {t.data.shape}")
    if not (anchor.data.shape == positive.data.shape == negative.data.shape):
        raise ShapeError(f"triplet_loss: shape mismatch {anchor.data.shape}, "
                         f"{positive.data.shape}, {negative.data.shape}")
    d_pos = (anchor - positive).square().sum(axis=1)
    d_neg = (anchor - negative).square().sum(axis=1)
    hinge = ad.maximum(d_pos - d_neg + margin, 0.0)
    return hinge.mean()


def kl_loss(mean: Tensor, logvar: Tensor) -> Tensor:
    """KL(q || N(0, I)) for a diagonal Gaussian, summed over the latent axis
    and averaged over the batch."""
    if mean.data.ndim != 2 or logvar.data.ndim != 2:
        raise ShapeError("kl_loss: mean and logvar must be [N, D]")
    if mean.data.shape != logvar.data.shape:
        raise ShapeError(f"kl_loss: shape mismatch {mean.data.shape} vs {logvar.data.shape}")
    inner = ad.add(logvar, 1.0) - mean.square() - ad.exp(logvar)
    per_row = ad.mul(inner.sum(axis=1), -0.5)
    return per_row.mean()


def total_loss(recon: Sequence[Tensor], triplet: Tensor | None = None,
               kl: Tensor | None = None, alpha: float = 1.0, beta: float = 1.0,
               kl_beta: float = 0.0) -> Tensor:
    """alpha * triplet + beta * sum(recon) + kl_beta * kl, skipping absent terms.

    The decomposition is exact up to float addition order: the terms are
    added left to right in the order written above.
    """
    if not recon:
        raise ShapeError("total_loss: at least one reconstruction term required")
    acc: Tensor | None = None
    if triplet is not None:
        acc = ad.mul(triplet, float(alpha))
    for term in recon:
        piece = ad.mul(term, float(beta))
        acc = piece if acc is None else acc + piece
    if kl is not None:
        acc = acc + ad.mul(kl, float(kl_beta))
    return acc
