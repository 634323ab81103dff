"""Deterministic orthographic ray-cast renderer.

Each scene renders twice from shared ray geometry: a shaded beauty pass and
a geometry-only label pass (instance ids + eroded binary mask). One primary
ray per pixel through the pixel center, straight down; no shadows, bounces,
or stochastic sampling, so identical scenes give identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BinaryMask, GrayImage, LabelMap, Rng
from .scenegen import Capsule, SceneSpec, Sphere, TriangleMesh
from .texture import diamond_square, dirt_overlay

_GRID_CELL_PX = 8


@dataclass(frozen=True)
class RenderOutput:
    beauty: GrayImage
    label_mask: BinaryMask
    id_map: LabelMap

    def __post_init__(self):
        shapes = {
            self.beauty.pixels.shape,
            self.label_mask.bits.shape,
            self.id_map.ids.shape,
        }
        if len(shapes) != 1:
            raise ValueError("render passes must share dimensions")
        if np.any(self.label_mask.bits & (self.id_map.ids == 0)):
            raise ValueError("label mask must be a subset of the id map support")


def _pixel_axes(scene: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    res = scene.resolution
    crop = scene.crop
    xs = crop.x0 + (np.arange(res) + 0.5) * (crop.width / res)
    # image row 0 is the top of the crop; world y grows upward
    ys = crop.y0 + crop.height - (np.arange(res) + 0.5) * (crop.height / res)
    return xs, ys


def _bbox_indices(vals: np.ndarray, lo: float, hi: float, ascending: bool) -> tuple[int, int]:
    """Index range [i0, i1) of vals falling inside [lo, hi], padded by 1."""
    n = vals.shape[0]
    if ascending:
        i0 = int(np.searchsorted(vals, lo)) - 1
        i1 = int(np.searchsorted(vals, hi)) + 1
    else:
        rev = vals[::-1]
        i0 = n - int(np.searchsorted(rev, hi)) - 1
        i1 = n - int(np.searchsorted(rev, lo)) + 1
    return max(0, i0), min(n, i1)


class _GeometryBuffers:
    """Nearest-hit depth, instance id, and surface normal per pixel."""

    def __init__(self, res: int):
        self.z = np.zeros((res, res), dtype=np.float64)
        self.idx = np.zeros((res, res), dtype=np.int64)
        self.normal = np.zeros((res, res, 3), dtype=np.float64)

    def commit(self, rows, cols, hit, z, nx, ny, nz, inst_id: int) -> None:
        # rows/cols are slices, so these are writable views
        sub_z = self.z[rows, cols]
        better = hit & (z > sub_z)
        if not better.any():
            return
        sub_z[better] = z[better]
        self.idx[rows, cols][better] = inst_id
        sub_n = self.normal[rows, cols]
        sub_n[better, 0] = np.broadcast_to(nx, better.shape)[better]
        sub_n[better, 1] = np.broadcast_to(ny, better.shape)[better]
        sub_n[better, 2] = np.broadcast_to(nz, better.shape)[better]


def _rotate_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def mesh_world_vertices(mesh: TriangleMesh, scale: float, rotation: float, position) -> np.ndarray:
    rot = _rotate_z(rotation)
    return (scale * mesh.vertices) @ rot.T + np.asarray(position, dtype=np.float64)


def _mesh_face_params(wv: np.ndarray, faces: np.ndarray):
    p0 = wv[faces[:, 0]]
    p1 = wv[faces[:, 1]]
    p2 = wv[faces[:, 2]]
    e1 = p1 - p0
    e2 = p2 - p0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    n = np.cross(e1, e2)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.maximum(norm, 1e-300)
    # two-sided shading: orient normals toward the camera
    flip = n[:, 2] < 0
    n[flip] = -n[flip]
    return p0, e1, e2, det, n


def _mesh_hits_grid(wv, faces, X, Y):
    """Max-z vertical-ray hit over the mesh, accelerated by a uniform grid.

    Pixels are processed in square blocks; each block only tests the faces
    whose xy bounding box overlaps the block's world rectangle. X is the (w,)
    column of world x's (ascending), Y the (h,) row y's (descending).
    Returns (hit, z, normals).
    """
    h, w = Y.shape[0], X.shape[0]
    hit = np.zeros((h, w), dtype=bool)
    zbuf = np.full((h, w), -np.inf)
    nbuf = np.zeros((h, w, 3))
    p0, e1, e2, det, fn = _mesh_face_params(wv, faces)
    ok = np.abs(det) > 1e-12
    if not ok.any():
        return hit, zbuf, nbuf
    fids = np.flatnonzero(ok)
    tri_x = wv[faces[fids], 0]
    tri_y = wv[faces[fids], 1]
    fx_min, fx_max = tri_x.min(axis=1), tri_x.max(axis=1)
    fy_min, fy_max = tri_y.min(axis=1), tri_y.max(axis=1)

    half_x = (abs(X[1] - X[0]) if w > 1 else 0.0) / 2.0
    half_y = (abs(Y[0] - Y[1]) if h > 1 else 0.0) / 2.0
    for r0 in range(0, h, _GRID_CELL_PX):
        r1 = min(h, r0 + _GRID_CELL_PX)
        ylo = Y[r1 - 1] - half_y
        yhi = Y[r0] + half_y
        row_any = (fy_min <= yhi) & (fy_max >= ylo)
        if not row_any.any():
            continue
        for c0 in range(0, w, _GRID_CELL_PX):
            c1 = min(w, c0 + _GRID_CELL_PX)
            xlo = X[c0] - half_x
            xhi = X[c1 - 1] + half_x
            sel = row_any & (fx_min <= xhi) & (fx_max >= xlo)
            if not sel.any():
                continue
            f = fids[sel]
            px = X[c0:c1][None, :, None]
            py = Y[r0:r1][:, None, None]
            dx = px - p0[f, 0]
            dy = py - p0[f, 1]
            d = det[f]
            u = (dx * e2[f, 1] - dy * e2[f, 0]) / d
            v = (-dx * e1[f, 1] + dy * e1[f, 0]) / d
            inside = (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12)
            zf = np.where(inside, p0[f, 2] + u * e1[f, 2] + v * e2[f, 2], -np.inf)
            best = np.argmax(zf, axis=2)
            bz = np.take_along_axis(zf, best[..., None], axis=2)[..., 0]
            got = np.isfinite(bz)
            if not got.any():
                continue
            sub_z = zbuf[r0:r1, c0:c1]
            better = got & (bz > sub_z)
            sub_z[better] = bz[better]
            nbuf[r0:r1, c0:c1][better] = fn[f[best]][better]
            hit[r0:r1, c0:c1] |= better
    return hit, zbuf, nbuf


def mesh_hits_brute(wv, faces, X, Y):
    """All-faces reference intersector (oracle for the grid version)."""
    p0, e1, e2, det, fn = _mesh_face_params(wv, faces)
    ok = np.abs(det) > 1e-12
    f = np.flatnonzero(ok)
    h, w = Y.shape[0], X.shape[0]
    if f.size == 0:
        return np.zeros((h, w), bool), np.full((h, w), -np.inf), np.zeros((h, w, 3))
    px = X[None, :, None]
    py = Y[:, None, None]
    dx = px - p0[f, 0]
    dy = py - p0[f, 1]
    d = det[f]
    u = (dx * e2[f, 1] - dy * e2[f, 0]) / d
    v = (-dx * e1[f, 1] + dy * e1[f, 0]) / d
    inside = (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12)
    zf = np.where(inside, p0[f, 2] + u * e1[f, 2] + v * e2[f, 2], -np.inf)
    best = np.argmax(zf, axis=2)
    bz = np.take_along_axis(zf, best[..., None], axis=2)[..., 0]
    hit = np.isfinite(bz)
    n = fn[f[best]]
    n[~hit] = 0.0
    return hit, np.where(hit, bz, -np.inf), n


def _trace(scene: SceneSpec) -> _GeometryBuffers:
    res = scene.resolution
    xs, ys = _pixel_axes(scene)
    buf = _GeometryBuffers(res)
    templates = {t.id: t for t in scene.templates}
    for inst_id, inst in enumerate(scene.instances, start=1):
        tpl = templates[inst.template_id]
        shape = tpl.shape
        cx, cy, cz = inst.position
        r = shape.bounding_radius * inst.scale
        c0, c1 = _bbox_indices(xs, cx - r, cx + r, ascending=True)
        r0, r1 = _bbox_indices(ys, cy - r, cy + r, ascending=False)
        if c0 >= c1 or r0 >= r1:
            continue
        X = xs[c0:c1]
        Y = ys[r0:r1]
        rows = slice(r0, r1)
        cols = slice(c0, c1)
        if isinstance(shape, Sphere):
            rad = shape.radius * inst.scale
            d2 = (X[None, :] - cx) ** 2 + (Y[:, None] - cy) ** 2
            hit = d2 <= rad * rad
            dz = np.sqrt(np.maximum(rad * rad - d2, 0.0))
            z = cz + dz
            nx = (X[None, :] - cx) / rad * np.ones_like(d2)
            ny = (Y[:, None] - cy) / rad * np.ones_like(d2)
            nz = dz / rad
        elif isinstance(shape, Capsule):
            rad = shape.radius * inst.scale
            half = shape.length * inst.scale / 2.0
            ax = math.cos(inst.rotation)
            ay = math.sin(inst.rotation)
            # closest point on the axis segment, in the substrate plane
            relx = X[None, :] - cx
            rely = Y[:, None] - cy
            t = np.clip((relx * ax + rely * ay), -half, half)
            qx = t * ax
            qy = t * ay
            d2 = (relx - qx) ** 2 + (rely - qy) ** 2
            hit = d2 <= rad * rad
            dz = np.sqrt(np.maximum(rad * rad - d2, 0.0))
            z = cz + dz
            nx = (relx - qx) / rad
            ny = (rely - qy) / rad
            nz = dz / rad
        else:
            wv = mesh_world_vertices(shape, inst.scale, inst.rotation, inst.position)
            hit, z, n = _mesh_hits_grid(wv, shape.faces, X, Y)
            nx = n[..., 0]
            ny = n[..., 1]
            nz = n[..., 2]
        buf.commit(rows, cols, hit, z, nx, ny, nz, inst_id)
    return buf


def _dirt_texture(scene: SceneSpec) -> GrayImage:
    rng = Rng(scene.master_seed, scene.lineage + ("dirt", "field"))
    corners = tuple(rng.uniform(0.0, 1.0, 4))
    field = diamond_square(
        scene.dirt.level, corners, scene.dirt.roughness, scene.dirt.decay, rng
    )
    return dirt_overlay(field, scene.dirt.threshold, scene.dirt.gain)


def _sample_bilinear(tex: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample tex at fractional row coords v, column coords u (align-corners)."""
    h, w = tex.shape
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    x0 = np.floor(uc).astype(np.int64)
    y0 = np.floor(vc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = uc - x0
    fy = vc - y0
    top = tex[y0, x0] + fx * (tex[y0, x1] - tex[y0, x0])
    bot = tex[y1, x0] + fx * (tex[y1, x1] - tex[y1, x0])
    return top + fy * (bot - top)


def render_beauty(scene: SceneSpec) -> GrayImage:
    """Photo-realistic pass: diffuse/glossy/edge-effect shading, dirt overlay."""
    return _shade(scene, _trace(scene))


def _shade(scene: SceneSpec, buf: _GeometryBuffers) -> GrayImage:
    res = scene.resolution
    xs, ys = _pixel_axes(scene)
    bright = scene.brightness
    light = np.asarray(scene.light_direction)
    half = light + np.array([0.0, 0.0, 1.0])
    half = half / np.linalg.norm(half)

    out = np.empty((res, res), dtype=np.float64)
    # substrate: flat albedo plus the dirt overlay sampled across the extent
    sub = scene.substrate_albedo * bright
    if scene.dirt.enabled:
        tex = _dirt_texture(scene).pixels
        side = tex.shape[0]
        u = (xs / scene.extent) * (side - 1)
        v = (1.0 - ys / scene.extent) * (side - 1)
        dirt = _sample_bilinear(tex, u[None, :].repeat(res, 0), v[:, None].repeat(res, 1))
        out[:] = sub + dirt
    else:
        out[:] = sub

    templates = {t.id: t for t in scene.templates}
    n = buf.normal
    ndotl = n[..., 0] * light[0] + n[..., 1] * light[1] + n[..., 2] * light[2]
    ndoth = n[..., 0] * half[0] + n[..., 1] * half[1] + n[..., 2] * half[2]
    for inst_id, inst in enumerate(scene.instances, start=1):
        sel = buf.idx == inst_id
        if not sel.any():
            continue
        shader = templates[inst.template_id].shader
        diff = shader.albedo * np.maximum(0.0, ndotl[sel]) * bright
        kind = type(shader).__name__
        if kind == "Glossy":
            diff = diff + shader.specular_strength * np.maximum(0.0, ndoth[sel]) ** shader.shininess * bright
        elif kind == "EdgeEffect":
            nv = np.abs(n[..., 2][sel])
            diff = diff + shader.edge_gain * (1.0 - nv) ** shader.edge_exponent * bright
        out[sel] = diff
    return GrayImage(np.clip(out, 0.0, 1.0))


def _erode3(m: np.ndarray) -> np.ndarray:
    """3x3 square erosion; beyond-border pixels count as foreground, matching
    the convention that the image border is not background."""
    p = np.pad(m, 1, constant_values=True)
    out = m.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out &= p[1 + dy : 1 + dy + m.shape[0], 1 + dx : 1 + dx + m.shape[1]]
    return out


def _dense_ids(idx: np.ndarray) -> LabelMap:
    present = np.unique(idx)
    present = present[present > 0]
    lut = np.zeros(int(idx.max()) + 1 if idx.size else 1, dtype=np.int64)
    lut[present] = np.arange(1, present.size + 1)
    return LabelMap(lut[idx])


def render_label(scene: SceneSpec) -> tuple[BinaryMask, LabelMap]:
    """Ground-truth pass: instance ids from the same geometry, then the
    binary mask eroded once with a 3x3 square element to strengthen borders.

    The id map is relabeled densely in instance order (instances that end up
    invisible leave no gap).
    """
    buf = _trace(scene)
    mask = BinaryMask(_erode3(buf.idx > 0))
    return mask, _dense_ids(buf.idx)


def render_pair(scene: SceneSpec) -> RenderOutput:
    """Both passes from one shared ray casting."""
    buf = _trace(scene)
    beauty = _shade(scene, buf)
    mask = BinaryMask(_erode3(buf.idx > 0))
    return RenderOutput(beauty, mask, _dense_ids(buf.idx))
