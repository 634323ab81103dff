"""Image-quality degradation and training-time pre-processing/augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryMask, GrayImage, Rng


@dataclass(frozen=True)
class AugmentSpec:
    rotation_quarter_turns: int = 0
    flip_horizontal: bool = False
    flip_vertical: bool = False
    zoom: float = 1.0
    intensity_scale: float = 1.0
    intensity_shift: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.rotation_quarter_turns not in (0, 1, 2, 3):
            raise ValueError("rotation_quarter_turns must be 0..3")
        if not (self.zoom > 0):
            raise ValueError("zoom must be > 0")
        if not (self.intensity_scale > 0):
            raise ValueError("intensity_scale must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _axis_coords(dst_len: int, src_len: int) -> np.ndarray:
    # align-corners: dst index i samples source coordinate i*(src-1)/(dst-1)
    if dst_len == 1 or src_len == 1:
        return np.zeros(dst_len, dtype=np.float64)
    return np.arange(dst_len, dtype=np.float64) * ((src_len - 1) / (dst_len - 1))


def _resize_bilinear_array(a: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = a.shape
    ys = _axis_coords(new_h, h)
    xs = _axis_coords(new_w, w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.minimum(y0, h - 1)
    x0 = np.minimum(x0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    # interpolate rows then columns; a + f*(b-a) never leaves [min(a,b), max(a,b)]
    top = a[y0][:, x0]
    top = top + fx * (a[y0][:, x1] - top)
    bot = a[y1][:, x0]
    bot = bot + fx * (a[y1][:, x1] - bot)
    return top + fy * (bot - top)


def resize_bilinear(img: GrayImage, new_width: int, new_height: int) -> GrayImage:
    """Align-corners bilinear resampling; single-pixel axes map to index 0."""
    if new_width < 1 or new_height < 1:
        raise ValueError("target dimensions must be >= 1")
    if new_width == img.width and new_height == img.height:
        return GrayImage(img.pixels)
    return GrayImage(_resize_bilinear_array(img.pixels, new_height, new_width))


def resize_nearest_mask(mask: BinaryMask, new_width: int, new_height: int) -> BinaryMask:
    """Nearest-neighbor mask resampling with the same align-corners mapping."""
    if new_width < 1 or new_height < 1:
        raise ValueError("target dimensions must be >= 1")
    ys = np.rint(_axis_coords(new_height, mask.height)).astype(np.int64)
    xs = np.rint(_axis_coords(new_width, mask.width)).astype(np.int64)
    return BinaryMask(mask.bits[ys][:, xs])


def add_gaussian_noise(img: GrayImage, sigma: float, rng: Rng) -> GrayImage:
    """Per-pixel independent N(0, sigma^2), clamped back to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return GrayImage(img.pixels)
    noisy = img.pixels + rng.normal(0.0, sigma, img.pixels.shape)
    return GrayImage(np.clip(noisy, 0.0, 1.0))


def degrade(img: GrayImage, target: int, sigma: float, rng: Rng) -> GrayImage:
    """Instrument-realism pass: bilinear upsampling then additive noise.

    Upsampling past the render resolution introduces the intended aliasing /
    blur in the particle contours.
    """
    resized = resize_bilinear(img, target, target)
    return add_gaussian_noise(resized, sigma, rng)


# ---------------------------------------------------------------------------
# CLAHE
# ---------------------------------------------------------------------------


def _tile_edges(total: int, tiles: int) -> np.ndarray:
    return np.linspace(0, total, tiles + 1).astype(np.int64)


def _tile_lut(tile: np.ndarray, clip_limit: float, bins: int) -> np.ndarray:
    """Mapping from bin index to output value in [0, 1] for one tile.

    Convention: histogram clipped at clip_limit * (pixels/bins), excess spread
    uniformly over all bins; lut = (cdf - cdf[0]) / (pixels - cdf[0]). A tile
    whose pixels occupy a single bin maps identically (bin centers), so
    constant regions pass through unchanged.
    """
    t = tile.size
    idx = np.minimum((tile * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx.ravel(), minlength=bins).astype(np.float64)
    occupied = int((hist > 0).sum())
    centers = (np.arange(bins) + 0.5) / bins
    if occupied <= 1:
        return centers
    clip = clip_limit * t / bins
    excess = np.maximum(hist - clip, 0.0).sum()
    hist = np.minimum(hist, clip) + excess / bins
    cdf = np.cumsum(hist)
    cdf_min = cdf[0]
    if cdf_min >= t:
        return centers
    return (cdf - cdf_min) / (t - cdf_min)


def clahe(
    img: GrayImage,
    tiles_x: int = 8,
    tiles_y: int = 8,
    clip_limit: float = 2.0,
    bins: int = 256,
) -> GrayImage:
    """Contrast-limited adaptive histogram equalization.

    Per-tile clipped-histogram cumulative mappings, bilinearly interpolated
    between the four surrounding tile centers (edge tiles extended).
    """
    if tiles_x < 1 or tiles_y < 1:
        raise ValueError("tile counts must be >= 1")
    if not (clip_limit > 1):
        raise ValueError("clip_limit must be > 1")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if img.width < tiles_x or img.height < tiles_y:
        raise ValueError("image must be at least tiles-sized")

    a = img.pixels
    h, w = a.shape
    row_edges = _tile_edges(h, tiles_y)
    col_edges = _tile_edges(w, tiles_x)
    luts = np.empty((tiles_y, tiles_x, bins), dtype=np.float64)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tile = a[row_edges[ty] : row_edges[ty + 1], col_edges[tx] : col_edges[tx + 1]]
            luts[ty, tx] = _tile_lut(tile, clip_limit, bins)

    bin_idx = np.minimum((a * bins).astype(np.int64), bins - 1)

    # fractional tile coordinates of every pixel relative to tile centers
    centers_y = (row_edges[:-1] + row_edges[1:]) / 2.0
    centers_x = (col_edges[:-1] + col_edges[1:]) / 2.0
    gy = np.interp(np.arange(h) + 0.5, centers_y, np.arange(tiles_y))
    gx = np.interp(np.arange(w) + 0.5, centers_x, np.arange(tiles_x))
    y0 = np.floor(gy).astype(np.int64)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.minimum(y0, tiles_y - 1)
    x0 = np.minimum(x0, tiles_x - 1)
    y1 = np.minimum(y0 + 1, tiles_y - 1)
    x1 = np.minimum(x0 + 1, tiles_x - 1)
    fy = (gy - y0)[:, None]
    fx = (gx - x0)[None, :]

    y0g = y0[:, None]
    y1g = y1[:, None]
    x0g = x0[None, :]
    x1g = x1[None, :]
    v00 = luts[y0g, x0g, bin_idx]
    v01 = luts[y0g, x1g, bin_idx]
    v10 = luts[y1g, x0g, bin_idx]
    v11 = luts[y1g, x1g, bin_idx]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    out = top + fy * (bot - top)
    return GrayImage(np.clip(out, 0.0, 1.0))


def tile_mappings(img: GrayImage, tiles_x: int, tiles_y: int, clip_limit: float, bins: int):
    """Expose the per-tile lookup tables (for monotonicity inspection)."""
    row_edges = _tile_edges(img.height, tiles_y)
    col_edges = _tile_edges(img.width, tiles_x)
    out = []
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tile = img.pixels[
                row_edges[ty] : row_edges[ty + 1], col_edges[tx] : col_edges[tx + 1]
            ]
            out.append(_tile_lut(tile, clip_limit, bins))
    return out


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def _zoom_array(a: np.ndarray, zoom: float, nearest: bool) -> np.ndarray:
    """Zoom about the center, preserving dimensions (crop for z>1, pad for z<1).

    Out-of-range samples pad with 0 (image) / False (mask).
    """
    h, w = a.shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    ys = cy + (np.arange(h) - cy) / zoom
    xs = cx + (np.arange(w) - cx) / zoom
    if nearest:
        yi = np.rint(ys).astype(np.int64)
        xi = np.rint(xs).astype(np.int64)
        valid = (yi >= 0) & (yi < h)
        validx = (xi >= 0) & (xi < w)
        out = np.zeros_like(a)
        yy = yi[valid]
        xx = xi[validx]
        out[np.ix_(valid, validx)] = a[yy][:, xx]
        return out
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros_like(a, dtype=np.float64)
    padded = np.zeros((h + 2, w + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = a
    # indices into the zero-padded array; fully outside rows/cols stay zero
    yi0 = np.clip(y0 + 1, 0, h + 1)
    yi1 = np.clip(y0 + 2, 0, h + 1)
    xi0 = np.clip(x0 + 1, 0, w + 1)
    xi1 = np.clip(x0 + 2, 0, w + 1)
    inside_y = (ys > -1) & (ys < h)
    inside_x = (xs > -1) & (xs < w)
    t00 = padded[yi0][:, xi0]
    t01 = padded[yi0][:, xi1]
    t10 = padded[yi1][:, xi0]
    t11 = padded[yi1][:, xi1]
    top = t00 + fx[None, :] * (t01 - t00)
    bot = t10 + fx[None, :] * (t11 - t10)
    out = top + fy[:, None] * (bot - top)
    out[~inside_y, :] = 0.0
    out[:, ~inside_x] = 0.0
    return out


def augment(
    img: GrayImage, mask: BinaryMask, spec: AugmentSpec, rng: Rng
) -> tuple[GrayImage, BinaryMask]:
    """Apply one augmentation draw to an (image, mask) pair.

    Geometric operations hit both rasters identically (bilinear image,
    nearest-neighbor mask so labels stay binary); intensity scale/shift and
    noise touch the image only.
    """
    if img.pixels.shape != mask.bits.shape:
        raise ValueError("image and mask dimensions must match")
    a = np.array(img.pixels)
    m = np.array(mask.bits)

    k = spec.rotation_quarter_turns
    if k:
        a = np.rot90(a, k)
        m = np.rot90(m, k)
    if spec.flip_horizontal:
        a = a[:, ::-1]
        m = m[:, ::-1]
    if spec.flip_vertical:
        a = a[::-1, :]
        m = m[::-1, :]
    if spec.zoom != 1.0:
        a = _zoom_array(a, spec.zoom, nearest=False)
        m = _zoom_array(m.astype(np.float64), spec.zoom, nearest=True) > 0.5
    a = np.clip(a * spec.intensity_scale + spec.intensity_shift, 0.0, 1.0)
    if spec.noise_sigma > 0:
        a = np.clip(a + rng.normal(0.0, spec.noise_sigma, a.shape), 0.0, 1.0)
    return GrayImage(np.ascontiguousarray(a)), BinaryMask(np.ascontiguousarray(m))
