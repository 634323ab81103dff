"""Probability-map thresholding and a classical baseline segmenter.

External CNN predictions enter the toolkit only as 16-bit probability PNGs
(0 -> 0.0, 65535 -> 1.0); the same strict > 0.51 rule applies to imported
maps and to the baseline's {0,1} output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BinaryMask, GrayImage
from .pipeline import clahe


class DegenerateHistogramError(ValueError):
    """Raised when a threshold is requested for a constant image."""


DEFAULT_THRESHOLD = 0.51


def sigmoid_map(logits, allow_unbounded: bool = True) -> GrayImage:
    """Pixel-wise p(x) = 1 / (1 + exp(-x)) over an image-shaped scalar raster."""
    arr = logits.pixels if isinstance(logits, GrayImage) else np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("logits raster must be 2-D")
    if not allow_unbounded and (arr.min() < 0 or arr.max() > 1):
        raise ValueError("logits outside [0, 1] require allow_unbounded=True")
    # split by sign for numerical stability at large |x|
    out = np.empty_like(arr, dtype=np.float64)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return GrayImage(out)


def threshold_probability(prob: GrayImage, t: float = DEFAULT_THRESHOLD) -> BinaryMask:
    """Particle iff p > t (strict): a pixel at exactly t stays background."""
    if not (0 <= t < 1):
        raise ValueError(f"threshold must lie in [0, 1), got {t}")
    return BinaryMask(prob.pixels > t)


def otsu_threshold(img: GrayImage, bins: int = 256) -> float:
    """Bin-center threshold maximizing inter-class variance; ties go low.

    Candidate thresholds sit after each bin k; the returned value is the
    center of bin k, so `pixel > threshold` keeps everything in bins > k.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    v = img.pixels
    if v.min() == v.max():
        raise DegenerateHistogramError("constant image has no threshold")
    idx = np.minimum((v * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx.ravel(), minlength=bins).astype(np.float64)
    total = hist.sum()
    centers = (np.arange(bins) + 0.5) / bins
    w0 = np.cumsum(hist)
    mu0 = np.cumsum(hist * centers)
    mu_t = mu0[-1]
    w1 = total - w0
    # between-class variance for a split after bin k (k = 0..bins-2)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = (mu0 * total - mu_t * w0) ** 2
        sigma_b = np.where((w0 > 0) & (w1 > 0), num / (w0 * w1), -np.inf)
    sigma_b = sigma_b[:-1]
    if not np.isfinite(sigma_b).any():
        raise DegenerateHistogramError("all pixels fall into a single histogram bin")
    k = int(np.argmax(sigma_b))  # argmax takes the first (lowest) maximum
    return float(centers[k])


@dataclass(frozen=True)
class BaselineParams:
    """Classical segmenter settings standing in for a trained CNN."""

    clahe_tiles: int = 4
    clahe_clip: float = 1.5
    clahe_bins: int = 256
    smoothing_radius: int = 1
    smoothing_passes: int = 1
    invert: bool = False

    def __post_init__(self) -> None:
        if self.smoothing_radius < 0:
            raise ValueError("smoothing radius must be >= 0")
        if self.smoothing_passes < 0:
            raise ValueError("smoothing passes must be >= 0")


def _box_blur(a: np.ndarray, radius: int) -> np.ndarray:
    """Normalized box filter with replicate padding."""
    if radius == 0:
        return a
    k = 2 * radius + 1
    padded = np.pad(a, radius, mode="edge")
    # integral image over padded, then window sums
    s = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    h, w = a.shape
    out = (
        s[k : k + h, k : k + w]
        - s[0:h, k : k + w]
        - s[k : k + h, 0:w]
        + s[0:h, 0:w]
    ) / (k * k)
    return np.clip(out, 0.0, 1.0)


def baseline_segment(img: GrayImage, params: BaselineParams) -> GrayImage:
    """CLAHE -> repeated box blur -> Otsu, emitted as a {0,1} probability map.

    The output flows through threshold_probability and the post-processing
    chain exactly like a CNN probability map would.
    """
    work = clahe(img, params.clahe_tiles, params.clahe_tiles, params.clahe_clip, params.clahe_bins)
    a = work.pixels
    for _ in range(params.smoothing_passes):
        a = _box_blur(a, params.smoothing_radius)
    t = otsu_threshold(GrayImage(a), params.clahe_bins)
    fg = a > t
    if params.invert:
        fg = ~fg
    return GrayImage(fg.astype(np.float64))
