"""Substrate surface-impurity textures via the diamond-square fractal."""

from __future__ import annotations

import numpy as np

from .core import GrayImage, Rng, _readonly


class HeightField:
    """Square scalar field of side 2^n + 1, unbounded before normalization."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"HeightField must be square, got shape {arr.shape}")
        side = arr.shape[0]
        if not _is_pow2(side - 1):
            raise ValueError(f"HeightField side must be 2^n + 1, got {side}")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def side(self) -> int:
        return self.values.shape[0]

    def __setattr__(self, name, value):
        raise AttributeError("HeightField is immutable")


def _is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def diamond_square(
    n: int,
    corners: tuple[float, float, float, float],
    roughness: float,
    decay: float,
    rng: Rng,
) -> HeightField:
    """Random midpoint-displacement fractal on a (2^n + 1)^2 grid.

    corners order is (top-left, top-right, bottom-left, bottom-right). Each
    level runs a diamond step (square centers get the mean of their 4 corners)
    then a square step (edge midpoints get the mean of their orthogonal
    neighbors: 3 on the border, 4 in the interior), both displaced by
    uniform(-a, +a). The amplitude a starts at `roughness` and is multiplied
    by `decay` after every level. There is no wrap-around: the texture is a
    single non-tiling substrate.
    """
    if n < 0:
        raise ValueError("level n must be >= 0")
    if roughness < 0:
        raise ValueError("roughness must be >= 0")
    if not (0 < decay <= 1):
        raise ValueError("decay must lie in (0, 1]")
    side = (1 << n) + 1
    grid = np.zeros((side, side), dtype=np.float64)
    tl, tr, bl, br = (float(c) for c in corners)
    grid[0, 0] = tl
    grid[0, -1] = tr
    grid[-1, 0] = bl
    grid[-1, -1] = br

    amplitude = float(roughness)
    step = side - 1
    while step > 1:
        half = step // 2
        # diamond step: each square's center gets the mean of its 4 corners
        tl = grid[0:-1:step, 0:-1:step]
        tr = grid[0:-1:step, step::step]
        bl = grid[step::step, 0:-1:step]
        br = grid[step::step, step::step]
        centers = (tl + tr + bl + br) / 4.0
        grid[half::step, half::step] = centers + rng.uniform(
            -amplitude, amplitude, centers.shape
        )
        # square step: edge midpoints average their orthogonal neighbors at
        # distance `half` (4 in the interior, 3 on borders, no wrap-around)
        padded = np.full((side + 2 * half, side + 2 * half), np.nan)
        padded[half : half + side, half : half + side] = grid
        for r0, c0 in ((0, half), (half, 0)):
            rows = np.arange(r0, side, step)
            cols = np.arange(c0, side, step)
            up = padded[np.ix_(rows, cols + half)]
            down = padded[np.ix_(rows + step, cols + half)]
            left = padded[np.ix_(rows + half, cols)]
            right = padded[np.ix_(rows + half, cols + step)]
            stack = np.stack([up, down, left, right])
            total = np.nansum(stack, axis=0)
            count = np.sum(~np.isnan(stack), axis=0)
            vals = total / count
            grid[r0::step, c0::step] = vals + rng.uniform(-amplitude, amplitude, vals.shape)
        amplitude *= decay
        step = half
    return HeightField(grid)


def dirt_overlay(field: HeightField, threshold: float, gain: float) -> GrayImage:
    """Thresholded min-max normalization of a height field.

    Output pixel = clamp(gain * max(0, normalized - threshold), 0, 1). A
    constant field normalizes to all zeros, so any threshold yields an empty
    overlay.
    """
    if not (0 <= threshold <= 1):
        raise ValueError("threshold must lie in [0, 1]")
    if gain < 0:
        raise ValueError("gain must be >= 0")
    v = field.values
    lo = v.min()
    hi = v.max()
    if hi > lo:
        norm = (v - lo) / (hi - lo)
    else:
        norm = np.zeros_like(v)
    out = np.clip(gain * np.maximum(0.0, norm - threshold), 0.0, 1.0)
    return GrayImage(out)
