"""Segmentation clean-up chain: area opening, exact Euclidean distance
transform, dynamics-controlled watershed, and connected-component labeling.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .core import BinaryMask, LabelMap, _readonly


class NoBackgroundError(ValueError):
    """Raised when a distance transform is requested for an all-foreground mask."""


@dataclass(frozen=True)
class WatershedParams:
    dynamic: float
    normalized: bool = False
    connectivity: int = 8

    def __post_init__(self) -> None:
        if self.dynamic < 0:
            raise ValueError("dynamic must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


class DistanceMap:
    """Per-pixel exact Euclidean distance to the nearest background pixel."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("DistanceMap must be 2-D")
        if arr.size and arr.min() < 0:
            raise ValueError("distances must be >= 0")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __setattr__(self, name, value):
        raise AttributeError("DistanceMap is immutable")


# ---------------------------------------------------------------------------
# Connected-component labeling (run-based two-pass union-find)
# ---------------------------------------------------------------------------


def _find(parent: list, i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _ccl_array(m: np.ndarray, connectivity: int, values: np.ndarray | None = None):
    """Label foreground components of m; returns (int64 labels, count).

    Labels are dense 1..count in raster-scan discovery order (the component
    whose first pixel comes first gets the lower id). When `values` is given,
    two neighboring pixels connect only if their values are equal, which turns
    the labeling into constant-value plateau extraction.
    """
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int64)
    if not m.any():
        return labels, 0

    # maximal horizontal runs (split on value changes when plateau labeling)
    cont = np.zeros_like(m)
    cont[:, 1:] = m[:, :-1]
    if values is not None:
        cont[:, 1:] &= values[:, 1:] == values[:, :-1]
    run_start = m & ~cont
    run_ids = np.cumsum(run_start.ravel()).reshape(h, w) - 1
    nruns = int(run_start.sum())

    # inter-row adjacency edges between runs
    shifts = (0,) if connectivity == 4 else (-1, 0, 1)
    parts_a = []
    parts_b = []
    for d in shifts:
        if d == 0:
            both = m[1:, :] & m[:-1, :]
            if values is not None:
                both &= values[1:, :] == values[:-1, :]
            parts_a.append(run_ids[1:, :][both])
            parts_b.append(run_ids[:-1, :][both])
        elif d == 1:
            both = m[1:, :-1] & m[:-1, 1:]
            if values is not None:
                both &= values[1:, :-1] == values[:-1, 1:]
            parts_a.append(run_ids[1:, :-1][both])
            parts_b.append(run_ids[:-1, 1:][both])
        else:
            both = m[1:, 1:] & m[:-1, :-1]
            if values is not None:
                both &= values[1:, 1:] == values[:-1, :-1]
            parts_a.append(run_ids[1:, 1:][both])
            parts_b.append(run_ids[:-1, :-1][both])
    ea = np.concatenate(parts_a) if parts_a else np.empty(0, dtype=np.int64)
    eb = np.concatenate(parts_b) if parts_b else np.empty(0, dtype=np.int64)
    if ea.size:
        codes = np.unique(ea * nruns + eb)
        ea = codes // nruns
        eb = codes % nruns

    # union by smaller run id, so each root is its component's first run
    parent = list(range(nruns))
    for a, b in zip(ea.tolist(), eb.tolist()):
        ra = _find(parent, a)
        rb = _find(parent, b)
        if ra == rb:
            continue
        if ra < rb:
            parent[rb] = ra
        else:
            parent[ra] = rb
    roots = np.fromiter((_find(parent, i) for i in range(nruns)), dtype=np.int64, count=nruns)
    uniq = np.unique(roots)
    dense = np.searchsorted(uniq, roots) + 1
    labels[m] = dense[run_ids[m]]
    return labels, int(uniq.size)


def connected_components(mask: BinaryMask, connectivity: int) -> LabelMap:
    """Dense 1..count labeling in raster-scan discovery order."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    labels, _ = _ccl_array(mask.bits, connectivity)
    return LabelMap(labels)


def area_opening(mask: BinaryMask, min_area: int, connectivity: int = 8) -> BinaryMask:
    """Remove components with area < min_area; survivors are kept pixel-exact."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    labels, count = _ccl_array(mask.bits, connectivity)
    if count == 0 or min_area <= 1:
        return BinaryMask(mask.bits)
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    keep = np.zeros(count + 1, dtype=bool)
    keep[1:] = areas[1:] >= min_area
    return BinaryMask(keep[labels])


# ---------------------------------------------------------------------------
# Exact Euclidean distance transform (integer separable two-pass)
# ---------------------------------------------------------------------------


def _axis_scan(m: np.ndarray, inf: int) -> np.ndarray:
    """1-D distance to the nearest background along axis 0 (rows)."""
    g = np.where(m, inf, 0).astype(np.int64)
    for r in range(1, g.shape[0]):
        np.minimum(g[r], g[r - 1] + 1, out=g[r])
    for r in range(g.shape[0] - 2, -1, -1):
        np.minimum(g[r], g[r + 1] + 1, out=g[r])
    return g


def distance_transform(mask: BinaryMask) -> DistanceMap:
    """Exact EDT from each foreground pixel to the nearest background pixel.

    The image border is not background: distances keep growing past it, and
    an all-foreground mask has no distance at all (error). Squared distances
    are minimized in integer arithmetic, so the result is exact, not a
    chamfer approximation: after the per-column scan g, the row pass takes
    min over shifts s of g(x+s)^2 + s^2, with |s| bounded by a pointwise
    upper bound on the true distance.
    """
    m = mask.bits
    h, w = m.shape
    if not m.any():
        return DistanceMap(np.zeros((h, w)))
    if m.all():
        raise NoBackgroundError("mask has no background pixel")
    inf = h + w
    g = _axis_scan(m, inf)
    g_rows = _axis_scan(m.T, inf).T
    # true distance <= min(vertical-only, horizontal-only) pointwise
    smax = int(np.minimum(g, g_rows).max())
    g2 = g * g
    d2 = g2.copy()
    for s in range(1, smax + 1):
        s2 = s * s
        np.minimum(d2[:, :-s], g2[:, s:] + s2, out=d2[:, :-s])
        np.minimum(d2[:, s:], g2[:, :-s] + s2, out=d2[:, s:])
    return DistanceMap(np.sqrt(d2))


# ---------------------------------------------------------------------------
# Watershed with minima suppression by dynamics (h-minima)
# ---------------------------------------------------------------------------


def _neighbor_offsets(connectivity: int):
    offs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        offs += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    return offs


def _shifted(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    """a translated so out[y, x] = a[y + dy, x + dx], padded with fill."""
    h, w = a.shape
    out = np.full_like(a, fill)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, dy), min(h, h + dy))
    xs_src = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[ys_src, xs_src]
    return out


def _directional_pass(e: np.ndarray, floor: np.ndarray, connectivity: int) -> None:
    """One top-to-bottom plus bottom-to-top relaxation sweep, in place."""
    h = e.shape[0]
    diag = connectivity == 8
    for r in range(1, h):
        cand = e[r - 1].copy()
        if diag:
            np.minimum(cand[1:], e[r - 1][:-1], out=cand[1:])
            np.minimum(cand[:-1], e[r - 1][1:], out=cand[:-1])
        np.maximum(floor[r], np.minimum(e[r], cand), out=e[r])
    for r in range(h - 2, -1, -1):
        cand = e[r + 1].copy()
        if diag:
            np.minimum(cand[1:], e[r + 1][:-1], out=cand[1:])
            np.minimum(cand[:-1], e[r + 1][1:], out=cand[:-1])
        np.maximum(floor[r], np.minimum(e[r], cand), out=e[r])


def _reconstruct_erosion(marker: np.ndarray, floor: np.ndarray, connectivity: int) -> np.ndarray:
    """Morphological reconstruction by erosion of marker over floor (marker >= floor).

    Iterated directional relaxations; each cycle propagates information across
    full rows and columns, so convergence takes roughly as many cycles as the
    steepest descending path turns corners.
    """
    e = marker.astype(np.float64, copy=True)
    while True:
        before = e.copy()
        _directional_pass(e, floor, connectivity)
        et = e.T.copy()
        _directional_pass(et, floor.T.copy(), connectivity)
        e = et.T.copy()
        if np.array_equal(before, e):
            return e


def _regional_minima(relief: np.ndarray, domain: np.ndarray, connectivity: int) -> np.ndarray:
    """Connected plateaus of the relief (within domain) with no lower neighbor."""
    nb_min = np.full_like(relief, np.inf)
    masked = np.where(domain, relief, np.inf)
    for dy, dx in _neighbor_offsets(connectivity):
        np.minimum(nb_min, _shifted(masked, dy, dx, np.inf), out=nb_min)
    has_lower = nb_min < masked
    plateaus, nplat = _ccl_array(domain, connectivity, values=relief)
    if nplat == 0:
        return np.zeros_like(domain)
    bad = np.bincount(plateaus[has_lower & domain], minlength=nplat + 1) > 0
    return domain & ~bad[plateaus]


def _priority_flood(
    relief: np.ndarray, domain: np.ndarray, seeds: np.ndarray, connectivity: int
) -> np.ndarray:
    """Flood unlabeled domain pixels from the seeds, lowest relief first.

    Heap keys are (relief, raster index, push sequence): ties resolve to the
    lower raster position, and a pixel reached by several basins joins the
    one that pushed it first. Every domain pixel ends up labeled (no ridge
    left unassigned).
    """
    h, w = relief.shape
    labels = seeds.copy()
    offs = _neighbor_offsets(connectivity)
    heap = []
    seq = 0
    for dy, dx in offs:
        src = _shifted(labels, dy, dx, 0)
        front = domain & (labels == 0) & (src > 0)
        for flat in np.flatnonzero(front.ravel()).tolist():
            heapq.heappush(heap, (relief.flat[flat], flat, seq, int(src.flat[flat])))
            seq += 1
    lab_flat = labels.ravel()
    dom_flat = domain.ravel()
    rel_flat = relief.ravel()
    while heap:
        _, flat, _, lab = heapq.heappop(heap)
        if lab_flat[flat]:
            continue
        lab_flat[flat] = lab
        r, c = divmod(flat, w)
        for dy, dx in offs:
            rq = r + dy
            cq = c + dx
            if 0 <= rq < h and 0 <= cq < w:
                q = rq * w + cq
                if dom_flat[q] and not lab_flat[q]:
                    heapq.heappush(heap, (rel_flat[q], q, seq, lab))
                    seq += 1
    return labels


def watershed_split(mask: BinaryMask, params: WatershedParams) -> LabelMap:
    """Distance-transform watershed with minima suppression by dynamics.

    Pipeline: exact EDT; optional min-max rescale of the distance map to
    [0, 255]; relief inversion; h-minima suppression via reconstruction by
    erosion of (relief + dynamic) over relief; priority-flood from the
    surviving regional minima, restricted to the mask.
    """
    m = mask.bits
    if not m.any():
        return LabelMap(np.zeros(m.shape, dtype=np.int64))
    dist = distance_transform(mask).values
    dmax = dist.max()
    if params.normalized and dmax > 0:
        dist = dist * (255.0 / dmax)
        dmax = 255.0
    relief = np.where(m, dmax - dist, np.inf)
    if params.dynamic > 0:
        relief = _reconstruct_erosion(relief + params.dynamic, relief, params.connectivity)
    minima = _regional_minima(relief, m, params.connectivity)
    seeds, _ = _ccl_array(minima, params.connectivity)
    labels = _priority_flood(relief, m, seeds, params.connectivity)
    return LabelMap(labels)


def postprocess_chain(mask: BinaryMask, min_area: int, params: WatershedParams) -> LabelMap:
    """Area opening followed by the watershed split."""
    opened = area_opening(mask, min_area, params.connectivity)
    return watershed_split(opened, params)
