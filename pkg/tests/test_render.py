import math

import numpy as np
import pytest

from himforge.core import Rng, encode_image
from himforge.postprocess import connected_components
from himforge.recipes import blob_mesh, sio2_recipe
from himforge.render import (
    RenderOutput,
    mesh_hits_brute,
    mesh_world_vertices,
    render_beauty,
    render_label,
    render_pair,
)
from himforge.render import _mesh_hits_grid  # grid/brute agreement oracle
from himforge.scenegen import (
    Capsule,
    CropRect,
    Diffuse,
    DirtSpec,
    EdgeEffect,
    Glossy,
    Instance,
    ParticleTemplate,
    SceneSpec,
    Sphere,
    build_scene,
    sample_distribution,
)


def make_scene(
    templates,
    instances,
    res=128,
    extent=128.0,
    brightness=1.0,
    light=(0.0, 0.0, 1.0),
    dirt=False,
    albedo=0.2,
):
    ln = math.sqrt(sum(c * c for c in light))
    light = tuple(c / ln for c in light)
    return SceneSpec(
        extent=extent,
        substrate_albedo=albedo,
        templates=tuple(templates),
        instances=tuple(instances),
        light_direction=light,
        brightness=brightness,
        crop=CropRect(0.0, 0.0, extent, extent),
        resolution=res,
        dirt=DirtSpec(enabled=dirt),
        master_seed=0,
        lineage=("test",),
    )


class TestBeauty:
    def test_empty_scene_constant(self):
        s = make_scene([ParticleTemplate("t", Sphere(5.0), Diffuse(0.7))], [], brightness=1.1)
        img = render_beauty(s)
        assert np.allclose(img.pixels, 0.2 * 1.1)

    def test_sphere_apex_brightness(self):
        tpl = ParticleTemplate("s", Sphere(20.0), Diffuse(0.75))
        inst = Instance("s", (64.0, 64.0, 20.0), 1.0, 0.0)
        s = make_scene([tpl], [inst], brightness=1.0, light=(0.0, 0.0, 1.0))
        img = render_beauty(s)
        r, c = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
        # projected apex: world (64, 64) -> col 63.5, row 63.5
        assert abs(c - 63.5) <= 1.0
        assert abs(r - 63.5) <= 1.0
        assert img.pixels.max() == pytest.approx(0.75, abs=1e-3)

    def test_brightness_linearity(self):
        tpl = [
            ParticleTemplate("d", Sphere(10.0), Diffuse(0.3)),
            ParticleTemplate("g", Sphere(8.0), Glossy(0.25, 0.1, 16.0)),
            ParticleTemplate("e", Sphere(9.0), EdgeEffect(0.2, 0.15, 1.5)),
        ]
        insts = [
            Instance("d", (30.0, 30.0, 10.0), 1.0, 0.0),
            Instance("g", (64.0, 70.0, 8.0), 1.0, 0.0),
            Instance("e", (95.0, 40.0, 9.0), 1.0, 0.0),
        ]
        lo = render_beauty(make_scene(tpl, insts, brightness=0.5, light=(0.2, 0.1, 0.95)))
        hi = render_beauty(make_scene(tpl, insts, brightness=1.0, light=(0.2, 0.1, 0.95)))
        assert np.allclose(hi.pixels, 2.0 * lo.pixels, atol=1e-12)

    def test_clamped_to_unit(self):
        tpl = ParticleTemplate("s", Sphere(20.0), Glossy(0.9, 2.0, 4.0))
        s = make_scene([tpl], [Instance("s", (64.0, 64.0, 20.0), 1.0, 0.0)], brightness=1.2)
        img = render_beauty(s)
        assert img.pixels.max() <= 1.0

    def test_dirt_appears_under_substrate_only(self):
        tpl = ParticleTemplate("s", Sphere(15.0), Diffuse(0.75))
        inst = Instance("s", (64.0, 64.0, 15.0), 1.0, 0.0)
        plain = render_beauty(make_scene([tpl], [inst], dirt=False))
        dirty = render_beauty(make_scene([tpl], [inst], dirt=True))
        _, ids = render_label(make_scene([tpl], [inst], dirt=False))
        particle = ids.ids > 0
        assert np.array_equal(plain.pixels[particle], dirty.pixels[particle])
        assert (dirty.pixels != plain.pixels).any()


class TestLabel:
    def test_eroded_disc_area(self):
        tpl = ParticleTemplate("s", Sphere(20.0), Diffuse(0.75))
        inst = Instance("s", (64.0, 64.0, 20.0), 1.0, 0.0)
        mask, _ = render_label(make_scene([tpl], [inst]))
        area = int(mask.bits.sum())
        # Erosion by the 3x3 square removes a rim of width |cos t| + |sin t|
        # (the square's support function), i.e. 1..sqrt(2) px depending on
        # direction. Exact analytic area of the eroded disc:
        r = 20.0
        ts = np.linspace(0.0, 2.0 * math.pi, 100001)
        rim = np.abs(np.cos(ts)) + np.abs(np.sin(ts))
        exact = float(np.trapezoid((r - rim) ** 2 / 2.0, ts))
        assert abs(area - exact) / exact < 0.015
        # the coarser "shrunk by one pixel" model over-estimates slightly
        assert abs(area - math.pi * 19.0**2) / (math.pi * 19.0**2) < 0.035

    def test_erosion_never_adds(self):
        s = build_scene(sio2_recipe(base_resolution=128, particle_count=(5, 10)), Rng(3).fork("s"))
        out = render_pair(s)
        assert not np.any(out.label_mask.bits & (out.id_map.ids == 0))

    def test_label_independent_of_light_and_shader(self):
        tpl_a = ParticleTemplate("s", Sphere(12.0), Diffuse(0.75))
        tpl_b = ParticleTemplate("s", Sphere(12.0), Glossy(0.3, 0.9, 8.0))
        inst = Instance("s", (50.0, 60.0, 12.0), 1.0, 0.0)
        m1, i1 = render_label(make_scene([tpl_a], [inst], light=(0, 0, 1), brightness=0.7))
        m2, i2 = render_label(make_scene([tpl_b], [inst], light=(0.5, 0.2, 0.9), brightness=1.3))
        assert m1 == m2
        assert i1 == i2

    def test_min_separation_scene_counts(self):
        # non-overlapping spheres with margins: every instance is one component
        tpl = ParticleTemplate("s", Sphere(6.0), Diffuse(0.75))
        for seed in range(5):
            margin = 8.0
            d = sample_distribution(20, 256.0 - 2 * margin, 16.0, (1.0, 1.0), Rng(seed).fork("p"))
            insts = [
                Instance("s", (x + margin, y + margin, 6.0), 1.0, 0.0)
                for x, y, _ in d.centers
            ]
            mask, ids = render_label(make_scene([tpl], insts, res=256, extent=256.0))
            assert ids.count == 20
            lab = connected_components(mask, 8)
            assert lab.count == 20

    def test_capsule_projected_area(self):
        rad, length = 6.0, 40.0
        tpl = ParticleTemplate("c", Capsule(rad, length), Diffuse(0.7))
        inst = Instance("c", (64.0, 64.0, rad), 1.0, 0.35)
        _, ids = render_label(make_scene([tpl], [inst], res=256, extent=128.0))
        # two pixels per unit length: areas scale by 4
        expected = (2 * rad * length + math.pi * rad * rad) * 4.0
        area = (ids.ids > 0).sum()
        assert abs(area - expected) / expected < 0.03


class TestPair:
    def test_dimensions_and_hit_agreement(self):
        s = build_scene(sio2_recipe(base_resolution=96, particle_count=(4, 6)), Rng(9).fork("s"))
        out = render_pair(s)
        assert out.beauty.pixels.shape == out.label_mask.bits.shape == out.id_map.ids.shape
        assert isinstance(out, RenderOutput)

    def test_bit_identical_across_runs(self):
        s = build_scene(
            sio2_recipe(base_resolution=96, particle_count=(4, 6)), Rng(4).fork("scene/0")
        )
        a = render_pair(s)
        b = render_pair(s)
        assert encode_image(a.beauty, 16) == encode_image(b.beauty, 16)
        assert a.label_mask == b.label_mask
        assert a.id_map == b.id_map


class TestMeshIntersection:
    @pytest.mark.parametrize("seed,faces_budget", [(1, 80), (2, 320)])
    def test_grid_matches_brute_force(self, seed, faces_budget):
        mesh = blob_mesh(seed, radius=10.0, jitter=0.4)
        if faces_budget > mesh.faces.shape[0]:
            from himforge.recipes import _subdivide

            v, f = _subdivide(np.asarray(mesh.vertices), np.asarray(mesh.faces))
            from himforge.scenegen import TriangleMesh

            mesh = TriangleMesh(v * 10.0 / np.linalg.norm(v, axis=1).max(), f)
        assert mesh.faces.shape[0] <= 500
        wv = mesh_world_vertices(mesh, 1.3, 0.7, (15.0, -3.0, 8.0))
        X = np.linspace(2.0, 28.0, 60)
        Y = np.linspace(9.0, -16.0, 55)
        hit_g, z_g, n_g = _mesh_hits_grid(wv, np.asarray(mesh.faces), X, Y)
        hit_b, z_b, n_b = mesh_hits_brute(wv, np.asarray(mesh.faces), X, Y)
        assert np.array_equal(hit_g, hit_b)
        zg = np.where(hit_g, z_g, 0.0)
        zb = np.where(hit_b, z_b, 0.0)
        assert np.abs(zg - zb).max() < 1e-9
        assert np.abs(np.where(hit_g[..., None], n_g - n_b, 0.0)).max() < 1e-9

    def test_mesh_renders_inside_unit_range(self):
        mesh = blob_mesh(5, radius=12.0, jitter=0.3)
        tpl = ParticleTemplate("m", mesh, EdgeEffect(0.55, 0.8, 1.5))
        inst = Instance("m", (64.0, 64.0, mesh.rest_height), 1.0, 1.1)
        img = render_beauty(make_scene([tpl], [inst], brightness=1.2))
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
        _, ids = render_label(make_scene([tpl], [inst]))
        assert ids.count == 1
