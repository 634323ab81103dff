"""Dataset access through the himforge file contract, plus the training-time
augmentation pipeline (re-implemented to the same semantics: quarter-turn
rotations, flips, zoom, intensity changes, Gaussian noise, CLAHE, and [0,1]
normalization).
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image


def read_gray16(path) -> np.ndarray:
    """16-bit (or 8-bit) single-channel PNG to float64 samples in [0, 1]."""
    im = Image.open(path)
    im.load()
    if im.mode == "L":
        return np.asarray(im, dtype=np.float64) / 255.0
    if im.mode in ("I;16", "I;16B", "I"):
        return np.asarray(im, dtype=np.float64) / 65535.0
    raise ValueError(f"unsupported PNG mode {im.mode} for {path}")


def read_mask(path) -> np.ndarray:
    im = Image.open(path)
    im.load()
    return np.asarray(im) > 127


def probability_png_bytes(prob: np.ndarray) -> bytes:
    """16-bit probability PNG: stored = round(p * 65535), 0 -> 0.0, 65535 -> 1.0."""
    if prob.min() < 0 or prob.max() > 1:
        raise ValueError("probabilities must lie in [0, 1]")
    quant = np.floor(prob * 65535.0 + 0.5).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(quant).save(buf, format="PNG")
    return buf.getvalue()


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class ManifestDataset:
    """Image/label pairs resolved from a himforge manifest.jsonl."""

    def __init__(self, manifest_path, indices=None):
        self.root = Path(manifest_path).parent
        lines = [
            ln
            for ln in Path(manifest_path).read_text(encoding="utf-8").splitlines()
            if ln.strip()
        ]
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise ValueError("manifest must start with a header line")
        self.header = header
        entries = [json.loads(ln) for ln in lines[1:]]
        entries.sort(key=lambda e: e["index"])
        if indices is not None:
            wanted = set(indices)
            entries = [e for e in entries if e["index"] in wanted]
        if not entries:
            raise ValueError("manifest holds no usable entries")
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    def load(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        e = self.entries[i]
        img = read_gray16(self.root / e["image"])
        mask = read_mask(self.root / e["label"])
        if img.shape != mask.shape:
            raise ValueError(f"entry {e['index']}: image/label dimensions differ")
        return img, mask


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def clahe(img: np.ndarray, tiles: int = 4, clip_limit: float = 1.5, bins: int = 256) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization (same conventions as
    the dataset toolkit: clipped histogram with uniform excess redistribution,
    (cdf - cdf[0]) / (n - cdf[0]) mapping, bilinear blend of tile mappings)."""
    h, w = img.shape
    row_edges = np.linspace(0, h, tiles + 1).astype(int)
    col_edges = np.linspace(0, w, tiles + 1).astype(int)
    luts = np.empty((tiles, tiles, bins))
    centers = (np.arange(bins) + 0.5) / bins
    for ty in range(tiles):
        for tx in range(tiles):
            tile = img[row_edges[ty] : row_edges[ty + 1], col_edges[tx] : col_edges[tx + 1]]
            n = tile.size
            idx = np.minimum((tile * bins).astype(int), bins - 1)
            hist = np.bincount(idx.ravel(), minlength=bins).astype(float)
            if (hist > 0).sum() <= 1:
                luts[ty, tx] = centers
                continue
            clip = clip_limit * n / bins
            excess = np.maximum(hist - clip, 0).sum()
            hist = np.minimum(hist, clip) + excess / bins
            cdf = np.cumsum(hist)
            if cdf[0] >= n:
                luts[ty, tx] = centers
            else:
                luts[ty, tx] = (cdf - cdf[0]) / (n - cdf[0])
    bin_idx = np.minimum((img * bins).astype(int), bins - 1)
    cy = (row_edges[:-1] + row_edges[1:]) / 2.0
    cx = (col_edges[:-1] + col_edges[1:]) / 2.0
    gy = np.clip(np.interp(np.arange(h) + 0.5, cy, np.arange(tiles)), 0, tiles - 1)
    gx = np.clip(np.interp(np.arange(w) + 0.5, cx, np.arange(tiles)), 0, tiles - 1)
    y0 = np.minimum(gy.astype(int), tiles - 1)
    x0 = np.minimum(gx.astype(int), tiles - 1)
    y1 = np.minimum(y0 + 1, tiles - 1)
    x1 = np.minimum(x0 + 1, tiles - 1)
    fy = (gy - y0)[:, None]
    fx = (gx - x0)[None, :]
    v00 = luts[y0[:, None], x0[None, :], bin_idx]
    v01 = luts[y0[:, None], x1[None, :], bin_idx]
    v10 = luts[y1[:, None], x0[None, :], bin_idx]
    v11 = luts[y1[:, None], x1[None, :], bin_idx]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return np.clip(top + fy * (bot - top), 0.0, 1.0)


def _zoom(a: np.ndarray, zoom: float, nearest: bool) -> np.ndarray:
    h, w = a.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys = cy + (np.arange(h) - cy) / zoom
    xs = cx + (np.arange(w) - cx) / zoom
    if nearest:
        yi = np.clip(np.rint(ys).astype(int), 0, h - 1)
        xi = np.clip(np.rint(xs).astype(int), 0, w - 1)
        out = a[yi][:, xi]
        out[(ys < -0.5) | (ys > h - 0.5)] = 0
        out[:, (xs < -0.5) | (xs > w - 0.5)] = 0
        return out
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0, 1)[:, None]
    fx = np.clip(xs - x0, 0, 1)[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    out[(ys < 0) | (ys > h - 1), :] = 0
    out[:, (xs < 0) | (xs > w - 1)] = 0
    return out


def augment_pair(
    img: np.ndarray, mask: np.ndarray, cfg, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One random augmentation draw: geometry hits both rasters (bilinear
    image, nearest mask), intensity and noise hit the image only."""
    k = int(rng.integers(0, 4))
    if k:
        img = np.rot90(img, k)
        mask = np.rot90(mask, k)
    if rng.random() < 0.5:
        img = img[:, ::-1]
        mask = mask[:, ::-1]
    if rng.random() < 0.5:
        img = img[::-1, :]
        mask = mask[::-1, :]
    zoom = float(rng.uniform(*cfg.zoom_range))
    if abs(zoom - 1.0) > 1e-6:
        img = _zoom(np.ascontiguousarray(img), zoom, nearest=False)
        mask = _zoom(np.ascontiguousarray(mask).astype(float), zoom, nearest=True) > 0.5
    scale = float(rng.uniform(*cfg.intensity_scale_range))
    shift = float(rng.uniform(*cfg.intensity_shift_range))
    img = np.clip(img * scale + shift, 0.0, 1.0)
    if cfg.noise_sigma > 0:
        img = np.clip(img + rng.normal(0.0, cfg.noise_sigma, img.shape), 0.0, 1.0)
    return np.ascontiguousarray(img), np.ascontiguousarray(mask)


def sample_batch(
    dataset: ManifestDataset,
    cfg,
    rng: np.random.Generator,
    cache: dict,
) -> tuple[np.ndarray, np.ndarray]:
    """One training mini-batch: each element is a random augmented patch of a
    randomly chosen (CLAHE-preprocessed) image."""
    xs = np.empty((cfg.batch_size, 1, cfg.patch_size, cfg.patch_size), dtype=np.float32)
    ys = np.empty_like(xs)
    for b in range(cfg.batch_size):
        i = int(rng.integers(0, len(dataset)))
        if i not in cache:
            img, mask = dataset.load(i)
            cache[i] = (clahe(img, cfg.clahe_tiles, cfg.clahe_clip), mask)
        img, mask = cache[i]
        h, w = img.shape
        if h < cfg.patch_size or w < cfg.patch_size:
            raise ValueError("patch size exceeds image size")
        y = int(rng.integers(0, h - cfg.patch_size + 1))
        x = int(rng.integers(0, w - cfg.patch_size + 1))
        pi = img[y : y + cfg.patch_size, x : x + cfg.patch_size]
        pm = mask[y : y + cfg.patch_size, x : x + cfg.patch_size]
        pi, pm = augment_pair(pi, pm, cfg, rng)
        xs[b, 0] = pi
        ys[b, 0] = pm
    return xs, ys
