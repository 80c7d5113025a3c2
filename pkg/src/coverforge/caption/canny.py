"""Canny edge detection: smooth, Sobel, NMS, double threshold, hysteresis."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

SMOOTH_SIGMA = 1.4
LOW_REL = 0.1
HIGH_REL = 0.3


def _sobel(img):
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    ky = kx.T
    gx = ndimage.convolve(img, kx, mode="nearest")
    gy = ndimage.convolve(img, ky, mode="nearest")
    return gx, gy


def canny(image, low=LOW_REL, high=HIGH_REL, sigma=SMOOTH_SIGMA):
    """Binary edge map of a single-channel [0,1] image.

    Thresholds are relative to the maximum gradient magnitude, so the
    result is invariant to uniform brightness shifts and gain.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("canny expects a single-channel image")
    smoothed = ndimage.gaussian_filter(img, sigma, mode="nearest")
    gx, gy = _sobel(smoothed)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros_like(img, dtype=bool)

    # quantize gradient direction into 4 bins and suppress non-maxima
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    h, w = img.shape
    padded = np.pad(mag, 1, mode="constant")
    c = padded[1:-1, 1:-1]
    neighbors = {
        0: (padded[1:-1, 2:], padded[1:-1, :-2]),     # E-W
        1: (padded[:-2, 2:], padded[2:, :-2]),        # NE-SW
        2: (padded[:-2, 1:-1], padded[2:, 1:-1]),     # N-S
        3: (padded[:-2, :-2], padded[2:, 2:]),        # NW-SE
    }
    dbin = ((angle + 22.5) // 45).astype(int) % 4
    thin = np.zeros((h, w), dtype=bool)
    for b, (n1, n2) in neighbors.items():
        sel = dbin == b
        thin |= sel & (c >= n1) & (c > n2)
    nms = np.where(thin, mag, 0.0)

    strong = nms >= high * peak
    weak = nms >= low * peak
    # hysteresis: keep weak pixels connected to a strong seed
    labels, n_labels = ndimage.label(weak, structure=np.ones((3, 3)))
    if n_labels == 0:
        return strong
    keep = np.zeros(n_labels + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]
