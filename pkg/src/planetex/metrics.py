"""Structural similarity between images."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.signal import convolve2d

C1 = 0.01**2
C2 = 0.03**2


def to_gray(image) -> np.ndarray:
    a = np.asarray(image, dtype=float)
    if a.ndim == 3:
        a = a[..., 0] * 0.299 + a[..., 1] * 0.587 + a[..., 2] * 0.114
    return a


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, window: np.ndarray | None = None) -> np.ndarray:
    """Local SSIM at every full window position (``valid`` convolution)."""
    x = to_gray(a)
    y = to_gray(b)
    if x.shape != y.shape:
        raise ValueError(f"image sizes differ: {x.shape} vs {y.shape}")
    win = gaussian_window() if window is None else window
    if x.shape[0] < win.shape[0] or x.shape[1] < win.shape[1]:
        raise ValueError("images are smaller than the SSIM window")

    def f(z):
        return convolve2d(z, win, mode="valid")

    mx, my = f(x), f(y)
    sxx = f(x * x) - mx * mx
    syy = f(y * y) - my * my
    sxy = f(x * y) - mx * my
    return ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))


def ssim(a, b, mask: np.ndarray | None = None) -> float:
    """Mean local SSIM; with ``mask``, only windows lying fully inside it count."""
    m = ssim_map(a, b)
    if mask is None:
        return float(m.mean())
    k = gaussian_window().shape[0]
    inner = ndimage.binary_erosion(np.asarray(mask, bool), np.ones((k, k)), border_value=0)
    r = k // 2
    sel = inner[r:inner.shape[0] - r, r:inner.shape[1] - r]
    if not sel.any():
        raise ValueError("mask contains no full SSIM window")
    return float(m[sel].mean())
