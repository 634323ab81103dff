"""Randomized virtual specimen scenes: particle placement, template
instancing, agglomeration, camera window, and light randomization.

Coordinates: the substrate is the square [0, extent]^2 at z = 0 with the
origin in its bottom-left corner; z points up toward the camera.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Rng, _readonly


class PlacementInfeasibleError(RuntimeError):
    """Rejection sampling ran out of attempts; carries the achieved count."""

    def __init__(self, requested: int, achieved: int):
        super().__init__(
            f"placed {achieved} of {requested} centers before exhausting the attempt budget"
        )
        self.requested = requested
        self.achieved = achieved


# ---------------------------------------------------------------------------
# Shapes and shaders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not (self.radius > 0):
            raise ValueError("sphere radius must be > 0")

    @property
    def bounding_radius(self) -> float:
        return self.radius

    @property
    def rest_height(self) -> float:
        return self.radius


@dataclass(frozen=True)
class Capsule:
    """Horizontal rod: a segment of the given length with hemispherical caps."""

    radius: float
    length: float

    def __post_init__(self):
        if not (self.radius > 0 and self.length > 0):
            raise ValueError("capsule radius and length must be > 0")

    @property
    def bounding_radius(self) -> float:
        return self.length / 2.0 + self.radius

    @property
    def rest_height(self) -> float:
        return self.radius


class TriangleMesh:
    """Closed-ish triangle mesh modeled around the local origin."""

    __slots__ = ("vertices", "faces")

    def __init__(self, vertices, faces) -> None:
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 3:
            raise ValueError("mesh vertices must be an (n, 3) array, n >= 3")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] < 1:
            raise ValueError("mesh faces must be an (m, 3) array of vertex triples")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise ValueError("mesh faces index out-of-range vertices")
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
        if np.any(areas <= 1e-12):
            raise ValueError("mesh contains degenerate zero-area faces")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "faces", _readonly(f))

    def __setattr__(self, name, value):
        raise AttributeError("TriangleMesh is immutable")

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    @property
    def rest_height(self) -> float:
        return float(-self.vertices[:, 2].min())

    def __eq__(self, other):
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(
            self.faces, other.faces
        )

    __hash__ = None


@dataclass(frozen=True)
class Diffuse:
    albedo: float


@dataclass(frozen=True)
class Glossy:
    albedo: float
    specular_strength: float
    shininess: float


@dataclass(frozen=True)
class EdgeEffect:
    """Silhouette brightening characteristic of secondary-electron imaging."""

    albedo: float
    edge_gain: float
    edge_exponent: float


SHAPE_KINDS = {"sphere": Sphere, "capsule": Capsule, "mesh": TriangleMesh}
SHADER_KINDS = {"diffuse": Diffuse, "glossy": Glossy, "edge": EdgeEffect}


@dataclass(frozen=True)
class ParticleTemplate:
    id: str
    shape: object
    shader: object

    def __post_init__(self):
        if not self.id:
            raise ValueError("template id must be nonempty")
        if not isinstance(self.shape, (Sphere, Capsule, TriangleMesh)):
            raise ValueError(f"unknown shape {type(self.shape).__name__}")
        if not isinstance(self.shader, (Diffuse, Glossy, EdgeEffect)):
            raise ValueError(f"unknown shader {type(self.shader).__name__}")

    @property
    def bounding_radius(self) -> float:
        return self.shape.bounding_radius


# ---------------------------------------------------------------------------
# Scene data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    template_id: str
    position: tuple[float, float, float]
    scale: float
    rotation: float  # about the vertical axis, radians

    def __post_init__(self):
        if not (self.scale > 0):
            raise ValueError("instance scale must be > 0")


@dataclass(frozen=True)
class CropRect:
    x0: float
    y0: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("crop must have positive size")


@dataclass(frozen=True)
class DirtSpec:
    enabled: bool = False
    level: int = 9
    roughness: float = 1.0
    decay: float = 0.5
    threshold: float = 0.55
    gain: float = 0.6


class DistributionMap:
    """Particle center coordinates plus the camera's crop window."""

    __slots__ = ("centers", "crop", "extent")

    def __init__(self, centers, crop: CropRect, extent: float) -> None:
        c = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        if c.size and (
            c[:, 0].min() < 0
            or c[:, 0].max() > extent
            or c[:, 1].min() < 0
            or c[:, 1].max() > extent
        ):
            raise ValueError("centers must lie within [0, extent]^2")
        if c.size and (c[:, 2].min() < 0 or c[:, 2].max() > 1):
            raise ValueError("center z must be a normalized height in [0, 1]")
        if (
            crop.x0 < 0
            or crop.y0 < 0
            or crop.x0 + crop.width > extent * (1 + 1e-12)
            or crop.y0 + crop.height > extent * (1 + 1e-12)
        ):
            raise ValueError("crop must be contained in the substrate")
        object.__setattr__(self, "centers", _readonly(c))
        object.__setattr__(self, "crop", crop)
        object.__setattr__(self, "extent", float(extent))

    def __setattr__(self, name, value):
        raise AttributeError("DistributionMap is immutable")


@dataclass(frozen=True)
class SceneSpec:
    extent: float
    substrate_albedo: float
    templates: tuple[ParticleTemplate, ...]
    instances: tuple[Instance, ...]
    light_direction: tuple[float, float, float]
    brightness: float
    crop: CropRect
    resolution: int
    dirt: DirtSpec
    master_seed: int
    lineage: tuple[str, ...]

    def __post_init__(self):
        if not (self.brightness > 0):
            raise ValueError("brightness must be > 0")
        if self.resolution < 16:
            raise ValueError("resolution must be >= 16")
        ids = {t.id for t in self.templates}
        if len(ids) != len(self.templates):
            raise ValueError("duplicate template ids")
        for inst in self.instances:
            if inst.template_id not in ids:
                raise ValueError(f"instance references undeclared template {inst.template_id!r}")
        n = math.sqrt(sum(c * c for c in self.light_direction))
        if not (abs(n - 1.0) < 1e-6):
            raise ValueError("light direction must be a unit vector")

    def template_by_id(self, tid: str) -> ParticleTemplate:
        for t in self.templates:
            if t.id == tid:
                return t
        raise KeyError(tid)


@dataclass(frozen=True)
class Recipe:
    name: str
    extent: float
    base_resolution: int
    nm_per_px: float
    substrate_albedo: float
    light_direction: tuple[float, float, float]
    particle_count: tuple[int, int]
    scale_jitter: tuple[float, float]
    min_separation: float
    zoom_range: tuple[float, float]
    brightness_range: tuple[float, float]
    templates: tuple[ParticleTemplate, ...]
    weights: tuple[float, ...]
    cluster_probability: float = 0.0
    cluster_size: tuple[int, int] = (2, 4)
    contact_slack: float = 0.1
    dirt_probability: float = 0.0
    dirt: DirtSpec = field(default_factory=DirtSpec)
    max_sink: float = 0.3

    def __post_init__(self):
        if not (self.extent > 0):
            raise ValueError("extent must be > 0")
        if self.base_resolution < 16:
            raise ValueError("base_resolution must be >= 16")
        if not (self.nm_per_px > 0):
            raise ValueError("nm_per_px must be > 0")
        for lo, hi, what in (
            (*self.particle_count, "particle_count"),
            (*self.scale_jitter, "scale_jitter"),
            (*self.zoom_range, "zoom_range"),
            (*self.brightness_range, "brightness_range"),
            (*self.cluster_size, "cluster_size"),
        ):
            if lo > hi:
                raise ValueError(f"{what} range must be ordered")
        if self.particle_count[0] < 0:
            raise ValueError("particle counts must be >= 0")
        if not (0 < self.zoom_range[0] and self.zoom_range[1] <= 1):
            raise ValueError("zoom_range must satisfy 0 < lo <= hi <= 1")
        if self.scale_jitter[0] <= 0:
            raise ValueError("scale_jitter must be positive")
        if self.brightness_range[0] <= 0:
            raise ValueError("brightness must be positive")
        if len(self.weights) != len(self.templates):
            raise ValueError("one weight per template required")
        if len(self.templates) == 0:
            raise ValueError("at least one template required")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("weights must be >= 0 with a positive sum")
        if not (0 <= self.cluster_probability <= 1):
            raise ValueError("cluster_probability must lie in [0, 1]")
        if not (0 <= self.dirt_probability <= 1):
            raise ValueError("dirt_probability must lie in [0, 1]")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")
        if not (0 <= self.max_sink <= 1):
            raise ValueError("max_sink must lie in [0, 1]")
        if self.cluster_size[0] < 1:
            raise ValueError("cluster sizes must be >= 1")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

_ATTEMPT_BUDGET = 10**6


def sample_distribution(
    count: int,
    extent: float,
    min_separation: float,
    zoom_range: tuple[float, float],
    rng: Rng,
) -> DistributionMap:
    """Uniform particle centers with optional minimum pairwise separation.

    Centers are rejection-sampled in [0, extent]^2; z heights are uniform in
    [0, 1]. The camera crop side is extent * uniform(lo, hi), positioned
    uniformly subject to containment.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    lo, hi = zoom_range
    if not (0 < lo <= hi <= 1):
        raise ValueError("zoom_range must satisfy 0 < lo <= hi <= 1")
    placed: list[tuple[float, float]] = []
    if count:
        pts = np.empty((count, 2), dtype=np.float64)
        n = 0
        attempts = 0
        min_sq = min_separation * min_separation
        while n < count:
            if attempts >= _ATTEMPT_BUDGET:
                raise PlacementInfeasibleError(count, n)
            attempts += 1
            x = rng.uniform(0.0, extent)
            y = rng.uniform(0.0, extent)
            if min_separation > 0 and n:
                d2 = (pts[:n, 0] - x) ** 2 + (pts[:n, 1] - y) ** 2
                if d2.min() < min_sq:
                    continue
            pts[n, 0] = x
            pts[n, 1] = y
            n += 1
        zs = rng.uniform(0.0, 1.0, count)
        centers = np.column_stack([pts, zs])
    else:
        centers = np.empty((0, 3), dtype=np.float64)
    side = extent * rng.uniform(lo, hi)
    side = min(side, extent)
    x0 = rng.uniform(0.0, extent - side) if side < extent else 0.0
    y0 = rng.uniform(0.0, extent - side) if side < extent else 0.0
    return DistributionMap(centers, CropRect(x0, y0, side, side), extent)


def agglomerate(
    base: tuple[ParticleTemplate, ...],
    k: int,
    contact_slack: float,
    rng: Rng,
    scale_range: tuple[float, float] | None = None,
) -> list[Instance]:
    """Chain k template instances into a touching agglomerate.

    Instance i+1 sits at distance (r_i + r_{i+1}) * (1 - contact_slack) from
    instance i in a random planar direction (r = scaled bounding radius);
    the first instance is at the local origin. Positions are planar (z = 0);
    the caller assigns resting heights.
    """
    if k < 1:
        raise ValueError("cluster size k must be >= 1")
    if not base:
        raise ValueError("at least one template required")
    out: list[Instance] = []
    pos = np.zeros(2)
    prev_r = 0.0
    for i in range(k):
        idx = int(rng.integers(0, len(base)))
        tpl = base[idx]
        if scale_range is not None:
            scale = float(np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]))))
        else:
            scale = 1.0
        r = tpl.bounding_radius * scale
        if i:
            theta = rng.uniform(0.0, 2.0 * math.pi)
            step = (prev_r + r) * (1.0 - contact_slack)
            pos = pos + step * np.array([math.cos(theta), math.sin(theta)])
        rotation = float(rng.uniform(0.0, 2.0 * math.pi))
        out.append(Instance(tpl.id, (float(pos[0]), float(pos[1]), 0.0), scale, rotation))
        prev_r = r
    return out


def _rest_z(template: ParticleTemplate, scale: float, sink: float) -> float:
    return template.shape.rest_height * scale * (1.0 - sink)


def build_scene(recipe: Recipe, rng: Rng) -> SceneSpec:
    """Draw one complete scene from the recipe.

    Every stochastic choice comes from a forked substream with a fixed label,
    so the result is a pure function of (recipe, master seed, lineage).
    """
    by_id = {t.id: t for t in recipe.templates}
    weights = np.asarray(recipe.weights, dtype=np.float64)
    weights = weights / weights.sum()

    r_count = rng.fork("count")
    n = int(r_count.integers(recipe.particle_count[0], recipe.particle_count[1] + 1))
    dist = sample_distribution(
        n, recipe.extent, recipe.min_separation, recipe.zoom_range, rng.fork("placement")
    )
    r_tpl = rng.fork("templates")
    tpl_idx = r_tpl.choice(len(recipe.templates), size=n, p=weights) if n else np.empty(0, int)
    r_scale = rng.fork("scales")
    jlo, jhi = recipe.scale_jitter
    scales = np.exp(r_scale.uniform(np.log(jlo), np.log(jhi), n)) if n else np.empty(0)
    r_rot = rng.fork("rotations")
    rots = r_rot.uniform(0.0, 2.0 * math.pi, n) if n else np.empty(0)
    r_clust = rng.fork("clusters")
    clustered = (
        r_clust.random(n) < recipe.cluster_probability if n else np.empty(0, dtype=bool)
    )

    instances: list[Instance] = []
    for i in range(n):
        cx, cy, cz = dist.centers[i]
        sink = recipe.max_sink * float(cz)
        if clustered[i]:
            c_rng = rng.fork(f"cluster/{i}")
            k = int(c_rng.integers(recipe.cluster_size[0], recipe.cluster_size[1] + 1))
            members = agglomerate(
                recipe.templates, k, recipe.contact_slack, c_rng, recipe.scale_jitter
            )
            sinks = recipe.max_sink * c_rng.uniform(0.0, 1.0, k)
            for j, member in enumerate(members):
                tpl = by_id[member.template_id]
                mx = min(max(member.position[0] + cx, 0.0), recipe.extent)
                my = min(max(member.position[1] + cy, 0.0), recipe.extent)
                mz = _rest_z(tpl, member.scale, float(sinks[j]))
                instances.append(
                    Instance(member.template_id, (mx, my, mz), member.scale, member.rotation)
                )
        else:
            tpl = recipe.templates[int(tpl_idx[i])]
            scale = float(scales[i])
            z = _rest_z(tpl, scale, sink)
            instances.append(
                Instance(tpl.id, (float(cx), float(cy), z), scale, float(rots[i]))
            )

    r_light = rng.fork("light")
    brightness = float(r_light.uniform(*recipe.brightness_range))
    r_dirt = rng.fork("dirt")
    dirt_on = bool(r_dirt.random() < recipe.dirt_probability)
    dirt = DirtSpec(
        enabled=dirt_on,
        level=recipe.dirt.level,
        roughness=recipe.dirt.roughness,
        decay=recipe.dirt.decay,
        threshold=recipe.dirt.threshold,
        gain=recipe.dirt.gain,
    )

    ld = np.asarray(recipe.light_direction, dtype=np.float64)
    ld = ld / np.linalg.norm(ld)

    return SceneSpec(
        extent=recipe.extent,
        substrate_albedo=recipe.substrate_albedo,
        templates=recipe.templates,
        instances=tuple(instances),
        light_direction=(float(ld[0]), float(ld[1]), float(ld[2])),
        brightness=brightness,
        crop=dist.crop,
        resolution=recipe.base_resolution,
        dirt=dirt,
        master_seed=rng.master_seed,
        lineage=rng.lineage,
    )


# ---------------------------------------------------------------------------
# JSON (de)serialization — canonical form for manifests
# ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(x) for x in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, compact separators, shortest-repr floats."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def shape_to_dict(shape) -> dict:
    if isinstance(shape, Sphere):
        return {"kind": "sphere", "radius": shape.radius}
    if isinstance(shape, Capsule):
        return {"kind": "capsule", "radius": shape.radius, "length": shape.length}
    if isinstance(shape, TriangleMesh):
        return {
            "kind": "mesh",
            "vertices": shape.vertices.tolist(),
            "faces": shape.faces.tolist(),
        }
    raise ValueError(f"unknown shape {shape!r}")


def shape_from_dict(d: dict):
    kind = d["kind"]
    if kind == "sphere":
        return Sphere(d["radius"])
    if kind == "capsule":
        return Capsule(d["radius"], d["length"])
    if kind == "mesh":
        return TriangleMesh(d["vertices"], d["faces"])
    raise ValueError(f"unknown shape kind {kind!r}")


def shader_to_dict(shader) -> dict:
    if isinstance(shader, Diffuse):
        return {"kind": "diffuse", "albedo": shader.albedo}
    if isinstance(shader, Glossy):
        return {
            "kind": "glossy",
            "albedo": shader.albedo,
            "specular_strength": shader.specular_strength,
            "shininess": shader.shininess,
        }
    if isinstance(shader, EdgeEffect):
        return {
            "kind": "edge",
            "albedo": shader.albedo,
            "edge_gain": shader.edge_gain,
            "edge_exponent": shader.edge_exponent,
        }
    raise ValueError(f"unknown shader {shader!r}")


def shader_from_dict(d: dict):
    kind = d["kind"]
    if kind == "diffuse":
        return Diffuse(d["albedo"])
    if kind == "glossy":
        return Glossy(d["albedo"], d["specular_strength"], d["shininess"])
    if kind == "edge":
        return EdgeEffect(d["albedo"], d["edge_gain"], d["edge_exponent"])
    raise ValueError(f"unknown shader kind {kind!r}")


def template_to_dict(t: ParticleTemplate) -> dict:
    return {"id": t.id, "shape": shape_to_dict(t.shape), "shader": shader_to_dict(t.shader)}


def template_from_dict(d: dict) -> ParticleTemplate:
    return ParticleTemplate(d["id"], shape_from_dict(d["shape"]), shader_from_dict(d["shader"]))


def dirt_to_dict(d: DirtSpec) -> dict:
    return {
        "enabled": d.enabled,
        "level": d.level,
        "roughness": d.roughness,
        "decay": d.decay,
        "threshold": d.threshold,
        "gain": d.gain,
    }


def dirt_from_dict(d: dict) -> DirtSpec:
    return DirtSpec(
        enabled=d.get("enabled", False),
        level=d["level"],
        roughness=d["roughness"],
        decay=d["decay"],
        threshold=d["threshold"],
        gain=d["gain"],
    )


def scene_to_dict(s: SceneSpec) -> dict:
    return {
        "extent": s.extent,
        "substrate_albedo": s.substrate_albedo,
        "templates": [template_to_dict(t) for t in s.templates],
        "instances": [
            {
                "template": i.template_id,
                "position": list(i.position),
                "scale": i.scale,
                "rotation": i.rotation,
            }
            for i in s.instances
        ],
        "light_direction": list(s.light_direction),
        "brightness": s.brightness,
        "crop": [s.crop.x0, s.crop.y0, s.crop.width, s.crop.height],
        "resolution": s.resolution,
        "dirt": dirt_to_dict(s.dirt),
        "master_seed": s.master_seed,
        "lineage": list(s.lineage),
    }


def scene_from_dict(d: dict) -> SceneSpec:
    return SceneSpec(
        extent=d["extent"],
        substrate_albedo=d["substrate_albedo"],
        templates=tuple(template_from_dict(t) for t in d["templates"]),
        instances=tuple(
            Instance(i["template"], tuple(i["position"]), i["scale"], i["rotation"])
            for i in d["instances"]
        ),
        light_direction=tuple(d["light_direction"]),
        brightness=d["brightness"],
        crop=CropRect(*d["crop"]),
        resolution=d["resolution"],
        dirt=dirt_from_dict(d["dirt"]),
        master_seed=d["master_seed"],
        lineage=tuple(d["lineage"]),
    )


def scene_to_json(s: SceneSpec) -> str:
    return canonical_json(scene_to_dict(s))


def recipe_to_dict(r: Recipe) -> dict:
    return {
        "name": r.name,
        "extent": r.extent,
        "base_resolution": r.base_resolution,
        "nm_per_px": r.nm_per_px,
        "substrate_albedo": r.substrate_albedo,
        "light_direction": list(r.light_direction),
        "particle_count": list(r.particle_count),
        "scale_jitter": list(r.scale_jitter),
        "min_separation": r.min_separation,
        "zoom_range": list(r.zoom_range),
        "brightness_range": list(r.brightness_range),
        "templates": [template_to_dict(t) for t in r.templates],
        "weights": list(r.weights),
        "cluster_probability": r.cluster_probability,
        "cluster_size": list(r.cluster_size),
        "contact_slack": r.contact_slack,
        "dirt_probability": r.dirt_probability,
        "dirt": dirt_to_dict(r.dirt),
        "max_sink": r.max_sink,
    }


def recipe_from_dict(d: dict) -> Recipe:
    return Recipe(
        name=d["name"],
        extent=d["extent"],
        base_resolution=d["base_resolution"],
        nm_per_px=d["nm_per_px"],
        substrate_albedo=d["substrate_albedo"],
        light_direction=tuple(d["light_direction"]),
        particle_count=tuple(d["particle_count"]),
        scale_jitter=tuple(d["scale_jitter"]),
        min_separation=d["min_separation"],
        zoom_range=tuple(d["zoom_range"]),
        brightness_range=tuple(d["brightness_range"]),
        templates=tuple(template_from_dict(t) for t in d["templates"]),
        weights=tuple(d["weights"]),
        cluster_probability=d.get("cluster_probability", 0.0),
        cluster_size=tuple(d.get("cluster_size", (2, 4))),
        contact_slack=d.get("contact_slack", 0.1),
        dirt_probability=d.get("dirt_probability", 0.0),
        dirt=dirt_from_dict(d["dirt"]) if "dirt" in d else DirtSpec(),
        max_sink=d.get("max_sink", 0.3),
    )


def recipe_to_json(r: Recipe) -> str:
    return canonical_json(recipe_to_dict(r))
