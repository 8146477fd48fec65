"""PSNR and SSIM on images in [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import GeometryError, ImageBuffer, Mask

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def _check(a: ImageBuffer, b: ImageBuffer, mask: Mask | None):
    if a.data.shape != b.data.shape:
        raise GeometryError(f"image shape mismatch: {a.data.shape} vs {b.data.shape}")
    if mask is not None and (mask.width, mask.height) != (a.width, a.height):
        raise GeometryError("mask size does not match the images")


def psnr(pred: ImageBuffer, gt: ImageBuffer, mask: Mask | None = None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    _check(pred, gt, mask)
    diff2 = (pred.data.astype(np.float64) - gt.data.astype(np.float64)) ** 2
    if mask is None:
        mse = diff2.mean()
    else:
        w = mask.data.astype(np.float64)[:, :, None]
        denom = w.sum() * pred.channels
        if denom == 0:
            raise GeometryError("mask selects no pixels")
        mse = (diff2 * w).sum() / denom
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / mse)


def gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM of two 2D arrays over the window-interior region."""
    taps = gaussian_taps()
    pad = SSIM_WINDOW // 2
    if min(a.shape) < SSIM_WINDOW:
        raise GeometryError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    def blur(x):
        y = correlate1d(x, taps, axis=0, mode="reflect")
        y = correlate1d(y, taps, axis=1, mode="reflect")
        return y[pad:-pad, pad:-pad]

    mu_a, mu_b = blur(a), blur(b)
    saa = blur(a * a) - mu_a * mu_a
    sbb = blur(b * b) - mu_b * mu_b
    sab = blur(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))


def ssim(pred: ImageBuffer, gt: ImageBuffer, mask: Mask | None = None) -> float:
    """Mean SSIM over channels (11-tap Gaussian window, sigma 1.5).

    Windows that would cross the image border are excluded; with a mask, only
    interior pixels whose mask value is nonzero are averaged (mask-weighted).
    """
    _check(pred, gt, mask)
    pad = SSIM_WINDOW // 2
    vals = []
    for c in range(pred.channels):
        m = ssim_map(pred.data[:, :, c].astype(np.float64), gt.data[:, :, c].astype(np.float64))
        if mask is None:
            vals.append(m.mean())
        else:
            w = mask.data[pad:-pad, pad:-pad].astype(np.float64)
            if w.sum() == 0:
                raise GeometryError("mask selects no interior pixels")
            vals.append((m * w).sum() / w.sum())
    return float(np.mean(vals))
