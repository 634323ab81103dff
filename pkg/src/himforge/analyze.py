"""Quantitative evaluation: pixel confusion metrics, per-particle statistics
and size histograms, dataset similarity embeddings, and the static gallery.
"""

from __future__ import annotations

import html
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BinaryMask, GrayImage, LabelMap, PixelScale, Rng

GOOD_F1 = 0.7  # segmentations at or above this score are reported as "good"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy/precision/recall/F1; a zero-denominator metric is None
    ("undefined"), deliberately distinct from 0."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    counts: ConfusionCounts

    @property
    def good(self) -> bool:
        return self.f1 is not None and self.f1 >= GOOD_F1

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "good_segmentation": self.good,
            "counts": {
                "tp": self.counts.tp,
                "tn": self.counts.tn,
                "fp": self.counts.fp,
                "fn": self.counts.fn,
            },
        }


def confusion(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    if pred.bits.shape != gt.bits.shape:
        raise ValueError("prediction and ground truth dimensions must match")
    p = pred.bits
    g = gt.bits
    tp = int(np.count_nonzero(p & g))
    tn = int(np.count_nonzero(~p & ~g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, tn, fp, fn)


def metrics(c: ConfusionCounts) -> MetricsReport:
    if c.total <= 0:
        raise ValueError("confusion counts must cover at least one pixel")
    acc = (c.tp + c.tn) / c.total
    prec = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else None
    rec = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    denom = 2 * c.tp + c.fp + c.fn
    f1 = (2 * c.tp) / denom if denom > 0 else None
    return MetricsReport(acc, prec, rec, f1, c)


# ---------------------------------------------------------------------------
# Per-particle statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentStats:
    id: int
    area_px: int
    sqrt_area_nm: float
    centroid: tuple[float, float]  # (x, y) pixel coordinates
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1) inclusive

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "area_px": self.area_px,
            "sqrt_area_nm": self.sqrt_area_nm,
            "centroid": list(self.centroid),
            "bbox": list(self.bbox),
        }


def component_stats(labels: LabelMap, scale: PixelScale) -> list[ComponentStats]:
    """One record per nonzero id; sqrt_area_nm = sqrt(area_px) * nm_per_px."""
    ids = labels.ids
    count = labels.count
    if count == 0:
        return []
    areas = np.bincount(ids.ravel(), minlength=count + 1)
    ys, xs = np.nonzero(ids)
    vals = ids[ys, xs]
    sum_x = np.bincount(vals, weights=xs, minlength=count + 1)
    sum_y = np.bincount(vals, weights=ys, minlength=count + 1)
    out = []
    order = np.argsort(vals, kind="stable")
    vs = vals[order]
    xs_o = xs[order]
    ys_o = ys[order]
    bounds = np.searchsorted(vs, np.arange(1, count + 2))
    for k in range(1, count + 1):
        lo, hi = bounds[k - 1], bounds[k]
        bx = xs_o[lo:hi]
        by = ys_o[lo:hi]
        a = int(areas[k])
        out.append(
            ComponentStats(
                id=k,
                area_px=a,
                sqrt_area_nm=math.sqrt(a) * scale.nm_per_px,
                centroid=(float(sum_x[k] / a), float(sum_y[k] / a)),
                bbox=(int(bx.min()), int(by.min()), int(bx.max()), int(by.max())),
            )
        )
    return out


@dataclass(frozen=True)
class SizeHistogram:
    bin_width: float
    counts: tuple[int, ...]
    n_particles: int

    def to_dict(self) -> dict:
        return {
            "bin_width_nm": self.bin_width,
            "counts": list(self.counts),
            "n_particles": self.n_particles,
        }


def size_histogram(stats: list[ComponentStats], bin_width: float) -> SizeHistogram:
    """Counts over left-closed bins [k*w, (k+1)*w) of sqrt-area in nm."""
    if not (bin_width > 0):
        raise ValueError("bin_width must be > 0")
    if not stats:
        return SizeHistogram(bin_width, (), 0)
    idx = [int(s.sqrt_area_nm // bin_width) for s in stats]
    counts = np.bincount(np.asarray(idx, dtype=np.int64))
    return SizeHistogram(bin_width, tuple(int(c) for c in counts), len(stats))


# ---------------------------------------------------------------------------
# Dataset comparison: patches -> features -> PCA -> t-SNE
# ---------------------------------------------------------------------------


def extract_patches(
    img: GrayImage,
    size: int = 144,
    mode: str = "sequential",
    count: int = 0,
    rng: Rng | None = None,
) -> list[GrayImage]:
    """Sequential mode tiles with stride = size, discarding partial tiles;
    random mode draws `count` uniformly positioned patches."""
    if img.width < size or img.height < size:
        raise ValueError("image is smaller than the patch size")
    a = img.pixels
    if mode == "sequential":
        out = []
        for r in range(img.height // size):
            for c in range(img.width // size):
                out.append(GrayImage(a[r * size : (r + 1) * size, c * size : (c + 1) * size]))
        return out
    if mode == "random":
        if rng is None:
            raise ValueError("random mode requires an rng")
        if count < 0:
            raise ValueError("count must be >= 0")
        out = []
        for _ in range(count):
            y = int(rng.integers(0, img.height - size + 1))
            x = int(rng.integers(0, img.width - size + 1))
            out.append(GrayImage(a[y : y + size, x : x + size]))
        return out
    raise ValueError(f"unknown mode {mode!r}")


_FEATURE_BLOCKS = 8
_FEATURE_HIST_BINS = 32
FEATURE_LENGTH = _FEATURE_BLOCKS * _FEATURE_BLOCKS + 2 * _FEATURE_HIST_BINS
_GRAD_MAX = math.sqrt(2.0)


def patch_features(patch: GrayImage) -> np.ndarray:
    """128-d hand-crafted patch descriptor.

    Layout: [0:64] 8x8 block means; [64:96] 32-bin intensity histogram
    (normalized); [96:128] 32-bin gradient-magnitude histogram (central
    differences, normalized). The gradient part is invariant to global
    intensity shifts.
    """
    a = patch.pixels
    blocks_r = np.array_split(np.arange(a.shape[0]), _FEATURE_BLOCKS)
    blocks_c = np.array_split(np.arange(a.shape[1]), _FEATURE_BLOCKS)
    means = np.empty((_FEATURE_BLOCKS, _FEATURE_BLOCKS))
    for i, br in enumerate(blocks_r):
        for j, bc in enumerate(blocks_c):
            means[i, j] = a[br[0] : br[-1] + 1, bc[0] : bc[-1] + 1].mean()

    ih = np.bincount(
        np.minimum((a * _FEATURE_HIST_BINS).astype(np.int64), _FEATURE_HIST_BINS - 1).ravel(),
        minlength=_FEATURE_HIST_BINS,
    ).astype(np.float64)
    ih /= a.size

    gy, gx = np.gradient(a)
    mag = np.sqrt(gx * gx + gy * gy)
    gidx = np.minimum((mag / _GRAD_MAX * _FEATURE_HIST_BINS).astype(np.int64), _FEATURE_HIST_BINS - 1)
    gh = np.bincount(gidx.ravel(), minlength=_FEATURE_HIST_BINS).astype(np.float64)
    gh /= a.size

    return np.concatenate([means.ravel(), ih, gh])


def pca(vectors, variance_target: float = 0.9):
    """Mean-centered covariance eigendecomposition keeping the smallest k
    with cumulative explained variance >= target.

    Returns (basis (d, k), projected (n, k), retained_variance).
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("pca needs at least 2 vectors")
    if not (0 < variance_target <= 1):
        raise ValueError("variance_target must lie in (0, 1]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    total = evals.sum()
    if total <= 0:
        # all points identical: a single direction carries all (zero) variance
        return evecs[:, :1], xc @ evecs[:, :1], 1.0
    cum = np.cumsum(evals) / total
    k = int(np.searchsorted(cum, variance_target - 1e-15) + 1)
    basis = evecs[:, :k]
    return basis, xc @ basis, float(cum[k - 1])


# ---------------------------------------------------------------------------
# t-SNE (exact O(n^2), deterministic)
# ---------------------------------------------------------------------------


class PerplexityError(ValueError):
    pass


@dataclass(frozen=True)
class TsneResult:
    positions: np.ndarray
    kl_initial: float  # objective right after early exaggeration ends
    kl_final: float


def _conditional_probabilities(d2: np.ndarray, perplexity: float) -> np.ndarray:
    """Per-point Gaussian bandwidths solved by bisection on the entropy."""
    n = d2.shape[0]
    target = math.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        di = np.delete(d2[i], i)
        beta_lo, beta_hi = 0.0, np.inf
        beta = 1.0
        for _ in range(64):
            w = np.exp(-di * beta)
            s = w.sum()
            if s <= 0:
                entropy = 0.0
                probs = np.zeros_like(w)
            else:
                probs = w / s
                nz = probs > 0
                entropy = -np.sum(probs[nz] * np.log(probs[nz]))
            if abs(entropy - target) < 1e-7:
                break
            if entropy > target:
                beta_lo = beta
                beta = beta * 2 if beta_hi == np.inf else (beta + beta_hi) / 2
            else:
                beta_hi = beta
                beta = beta / 2 if beta_lo == 0.0 else (beta + beta_lo) / 2
        row = np.insert(probs, i, 0.0)
        p[i] = row
    return p


def _kl_divergence(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    d2 = np.sum((y[:, None, :] - y[None, :, :]) ** 2, axis=2)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    q = np.maximum(q, 1e-12)
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    return kl, num, q


def tsne(vectors, perplexity: float, iterations: int, rng: Rng) -> TsneResult:
    """Standard t-SNE with exact pairwise gradients.

    Symmetrized Gaussian affinities (bandwidths bisected to the target
    perplexity), Student-t low-dimensional kernel, gradient descent with
    momentum and early exaggeration. Deterministic for a given rng.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if n < 10:
        raise PerplexityError("t-SNE needs at least 10 points")
    if not (perplexity < (n - 1) / 3):
        raise PerplexityError(f"perplexity {perplexity} infeasible for n={n}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    cond = _conditional_probabilities(d2, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)
    np.fill_diagonal(p, 0.0)

    exaggeration = 4.0
    exagg_until = min(100, max(1, iterations // 4))
    momentum_switch = 250
    lr = 200.0

    y = rng.normal(0.0, 1e-4, (n, 2))
    velocity = np.zeros_like(y)
    kl_initial = None
    for it in range(iterations):
        exagg = exaggeration if it < exagg_until else 1.0
        kl, num, q = _kl_divergence(p, y)  # objective always on the true affinities
        if it == exagg_until:
            kl_initial = kl
        w = (exagg * p - q) * num
        grad = 4.0 * (y * w.sum(axis=1)[:, None] - w @ y)
        mom = 0.5 if it < momentum_switch else 0.8
        velocity = mom * velocity - lr * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    kl_last, _, _ = _kl_divergence(p, y)
    if kl_initial is None:
        kl_initial = kl_last
    return TsneResult(y, float(kl_initial), float(kl_last))


# ---------------------------------------------------------------------------
# Gallery
# ---------------------------------------------------------------------------

# fixed 12-entry CCL palette; ids cycle by (id - 1) % 12
CCL_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 190),
    (0, 128, 128),
    (170, 110, 40),
)


@dataclass(frozen=True)
class GalleryEntry:
    name: str
    image: GrayImage
    mask: BinaryMask | None = None
    labels: LabelMap | None = None
    report: MetricsReport | None = None


def _boundary(mask: np.ndarray) -> np.ndarray:
    inner = mask.copy()
    p = np.pad(mask, 1, constant_values=False)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            inner &= p[1 + dy : 1 + dy + mask.shape[0], 1 + dx : 1 + dx + mask.shape[1]]
    return mask & ~inner


def overlay_rgb(entry: GalleryEntry, alpha: float = 0.45) -> np.ndarray:
    """Grayscale base with CCL coloring and a bright mask boundary."""
    base = (entry.image.pixels * 255.0).astype(np.float64)
    rgb = np.stack([base, base, base], axis=2)
    if entry.labels is not None and entry.labels.count:
        ids = entry.labels.ids
        palette = np.array(CCL_PALETTE, dtype=np.float64)
        colors = palette[(np.arange(1, entry.labels.count + 1) - 1) % len(CCL_PALETTE)]
        lut = np.zeros((entry.labels.count + 1, 3))
        lut[1:] = colors
        on = ids > 0
        rgb[on] = (1 - alpha) * rgb[on] + alpha * lut[ids[on]]
    if entry.mask is not None:
        edge = _boundary(entry.mask.bits)
        rgb[edge] = (255.0, 255.0, 255.0)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _fmt_metric(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def emit_gallery(entries: list[GalleryEntry], out_dir) -> Path:
    """Write per-entry overlay PNGs and a static HTML contact sheet.

    Output is byte-identical across regenerations (no timestamps embedded).
    """
    if not entries:
        raise ValueError("gallery needs at least one entry")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for e in entries:
        png_name = f"{e.name}_overlay.png"
        arr = overlay_rgb(e)
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="PNG")
        (out / png_name).write_bytes(buf.getvalue())
        if e.report is not None:
            m = e.report
            cells = (
                f"<td>{_fmt_metric(m.f1)}</td><td>{_fmt_metric(m.precision)}</td>"
                f"<td>{_fmt_metric(m.recall)}</td><td>{_fmt_metric(m.accuracy)}</td>"
                f"<td>{'good' if m.good else 'poor'}</td>"
            )
        else:
            cells = "<td>-</td>" * 5
        n_particles = e.labels.count if e.labels is not None else "-"
        rows.append(
            "<tr>"
            f"<td>{html.escape(e.name)}</td>"
            f"<td><img src='{html.escape(png_name)}' width='256'></td>"
            f"<td>{n_particles}</td>" + cells + "</tr>"
        )
    doc = (
        "<!DOCTYPE html>\n<html><head><meta charset='utf-8'>"
        "<title>segmentation gallery</title>"
        "<style>table{border-collapse:collapse}td,th{border:1px solid #888;"
        "padding:4px 8px;font-family:sans-serif}</style></head><body>"
        "<h1>Segmentation gallery</h1>"
        "<table><tr><th>entry</th><th>overlay</th><th>particles</th>"
        "<th>F1</th><th>precision</th><th>recall</th><th>accuracy</th>"
        "<th>quality</th></tr>"
        + "".join(rows)
        + "</table></body></html>\n"
    )
    (out / "index.html").write_text(doc, encoding="utf-8")
    return out / "index.html"
