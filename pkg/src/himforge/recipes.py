"""Built-in scene recipes mirroring the three specimen families:
spherical silica, agglomerating faceted titania, and silver rods/wires.
"""

from __future__ import annotations

import math

import numpy as np

from .core import Rng
from .scenegen import (
    Capsule,
    DirtSpec,
    EdgeEffect,
    Glossy,
    ParticleTemplate,
    Recipe,
    Sphere,
    TriangleMesh,
)


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(
        [
            (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
            (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
            (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
            (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
        ],
        dtype=np.int64,
    )
    return v, f


def _subdivide(v: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    verts = [tuple(p) for p in v]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
            m = m / np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(tuple(m))
        return cache[key]

    faces = []
    for a, b, c in f.tolist():
        ab = midpoint(a, b)
        bc = midpoint(b, c)
        ca = midpoint(c, a)
        faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def blob_mesh(seed: int, radius: float = 1.0, jitter: float = 0.3, squash: float = 0.75) -> TriangleMesh:
    """Irregular faceted blob: jittered, vertically squashed icosphere.

    Deterministic for a given seed, so templates reproduce exactly from their
    recipe serialization or from the construction call.
    """
    rng = Rng(seed, ("blob-mesh",))
    v, f = _subdivide(*_icosahedron())
    radial = 1.0 + jitter * (rng.uniform(0.0, 1.0, v.shape[0]) - 0.5)
    v = v * radial[:, None]
    v[:, 2] *= squash
    v *= radius
    return TriangleMesh(v, f)


def sio2_recipe(
    base_resolution: int = 507,
    dirt_probability: float = 0.5,
    particle_count: tuple[int, int] = (40, 80),
) -> Recipe:
    """Spherical particles in two size populations plus a smaller, brighter
    one. The edge-glow shading with gain close to albedo gives the flat
    bright-particle appearance of secondary-electron imaging (a plain N.L
    ramp would leave shadow-side interiors darker than any real micrograph).
    """
    templates = (
        ParticleTemplate("big-a", Sphere(13.0), EdgeEffect(0.6, 0.55, 1.0)),
        ParticleTemplate("big-b", Sphere(10.5), EdgeEffect(0.55, 0.5, 1.0)),
        ParticleTemplate("small", Sphere(6.0), EdgeEffect(0.72, 0.62, 1.0)),
    )
    return Recipe(
        name="sio2",
        extent=float(base_resolution),
        base_resolution=base_resolution,
        nm_per_px=0.976,
        substrate_albedo=0.18,
        light_direction=(0.12, 0.08, 0.99),
        particle_count=particle_count,
        scale_jitter=(0.85, 1.18),
        min_separation=34.0,
        zoom_range=(0.62, 0.95),
        brightness_range=(0.8, 1.2),
        templates=templates,
        weights=(0.38, 0.3, 0.32),
        cluster_probability=0.0,
        dirt_probability=dirt_probability,
        dirt=DirtSpec(level=9, roughness=1.0, decay=0.5, threshold=0.62, gain=0.3),
    )


def tio2_recipe(base_resolution: int = 507) -> Recipe:
    """Faceted particles that agglomerate into chains and sheets; all four
    mesh templates share the silhouette-brightening shader."""
    shader = EdgeEffect(0.55, 0.8, 1.5)
    templates = tuple(
        ParticleTemplate(f"blob-{i}", blob_mesh(seed=100 + i, radius=11.0 + 2.0 * i, jitter=0.35), shader)
        for i in range(4)
    )
    return Recipe(
        name="tio2",
        extent=float(base_resolution),
        base_resolution=base_resolution,
        nm_per_px=0.976,
        substrate_albedo=0.2,
        light_direction=(0.3, 0.15, 0.94),
        particle_count=(25, 60),
        scale_jitter=(0.7, 1.3),
        min_separation=46.0,
        zoom_range=(0.6, 0.95),
        brightness_range=(0.8, 1.2),
        templates=templates,
        weights=(0.25, 0.25, 0.25, 0.25),
        cluster_probability=0.45,
        cluster_size=(2, 4),
        contact_slack=0.12,
        dirt_probability=0.3,
        dirt=DirtSpec(level=9, roughness=1.0, decay=0.5, threshold=0.62, gain=0.3),
    )


def ag_recipe(base_resolution: int = 507) -> Recipe:
    """Rod- and wire-like particles built from capsules."""
    templates = (
        ParticleTemplate("rod", Capsule(4.5, 38.0), Glossy(0.7, 0.4, 16.0)),
        ParticleTemplate("wire", Capsule(3.5, 110.0), Glossy(0.72, 0.45, 16.0)),
        ParticleTemplate("dot", Sphere(5.5), Glossy(0.65, 0.5, 20.0)),
    )
    return Recipe(
        name="ag",
        extent=float(base_resolution),
        base_resolution=base_resolution,
        nm_per_px=0.976,
        substrate_albedo=0.18,
        light_direction=(0.2, 0.25, 0.95),
        particle_count=(12, 30),
        scale_jitter=(0.8, 1.25),
        min_separation=0.0,
        zoom_range=(0.65, 1.0),
        brightness_range=(0.8, 1.2),
        templates=templates,
        weights=(0.45, 0.25, 0.3),
        cluster_probability=0.2,
        cluster_size=(2, 3),
        contact_slack=0.05,
        dirt_probability=0.25,
        dirt=DirtSpec(level=9, roughness=1.0, decay=0.5, threshold=0.62, gain=0.3),
    )


BUILTIN_RECIPES = {
    "sio2": sio2_recipe,
    "tio2": tio2_recipe,
    "ag": ag_recipe,
}
