import numpy as np
import pytest

from himforge.core import Rng
from himforge.recipes import ag_recipe, blob_mesh, sio2_recipe, tio2_recipe
from himforge.scenegen import (
    Capsule,
    Diffuse,
    ParticleTemplate,
    PlacementInfeasibleError,
    Recipe,
    Sphere,
    TriangleMesh,
    agglomerate,
    build_scene,
    recipe_from_dict,
    recipe_to_dict,
    recipe_to_json,
    sample_distribution,
    scene_from_dict,
    scene_to_dict,
    scene_to_json,
)


class TestShapes:
    def test_validation(self):
        with pytest.raises(ValueError):
            Sphere(0.0)
        with pytest.raises(ValueError):
            Capsule(1.0, -2.0)
        with pytest.raises(ValueError):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])  # zero area
        with pytest.raises(ValueError):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 5]])  # bad index

    def test_bounding_radius(self):
        assert Sphere(3.0).bounding_radius == 3.0
        assert Capsule(2.0, 10.0).bounding_radius == 7.0
        mesh = blob_mesh(1, radius=5.0, jitter=0.0)
        assert mesh.bounding_radius == pytest.approx(5.0, rel=0.01)


class TestSampleDistribution:
    def test_count_zero(self):
        d = sample_distribution(0, 100.0, 5.0, (0.5, 1.0), Rng(1))
        assert d.centers.shape == (0, 3)
        assert d.crop.width > 0

    def test_min_separation_brute_force(self):
        d = sample_distribution(50, 400.0, 18.0, (1.0, 1.0), Rng(2).fork("p"))
        c = d.centers
        assert c.shape == (50, 3)
        for i in range(50):
            for j in range(i + 1, 50):
                dist = np.hypot(c[i, 0] - c[j, 0], c[i, 1] - c[j, 1])
                assert dist >= 18.0

    def test_degenerate_zoom_full_extent(self):
        d = sample_distribution(5, 123.0, 0.0, (1.0, 1.0), Rng(3))
        assert d.crop.x0 == 0.0 and d.crop.y0 == 0.0
        assert d.crop.width == 123.0 and d.crop.height == 123.0

    def test_infeasible_reports_achieved(self):
        with pytest.raises(PlacementInfeasibleError) as ei:
            sample_distribution(100, 10.0, 9.0, (1.0, 1.0), Rng(4))
        assert 0 < ei.value.achieved < 100

    def test_z_in_unit_interval(self):
        d = sample_distribution(64, 100.0, 0.0, (0.3, 0.8), Rng(5))
        assert d.centers[:, 2].min() >= 0.0
        assert d.centers[:, 2].max() <= 1.0


class TestAgglomerate:
    def _templates(self):
        return (
            ParticleTemplate("a", Sphere(4.0), Diffuse(0.7)),
            ParticleTemplate("b", Sphere(7.0), Diffuse(0.7)),
        )

    def test_single_at_origin(self):
        out = agglomerate(self._templates(), 1, 0.1, Rng(0))
        assert len(out) == 1
        assert out[0].position == (0.0, 0.0, 0.0)

    def test_tangency_at_zero_slack(self):
        tpls = {t.id: t for t in self._templates()}
        out = agglomerate(self._templates(), 3, 0.0, Rng(1).fork("agg"))
        for a, b in zip(out, out[1:]):
            ra = tpls[a.template_id].bounding_radius * a.scale
            rb = tpls[b.template_id].bounding_radius * b.scale
            d = np.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
            assert d == pytest.approx(ra + rb, abs=1e-12)

    def test_overlap_with_slack(self):
        tpls = {t.id: t for t in self._templates()}
        out = agglomerate(self._templates(), 5, 0.2, Rng(2).fork("agg"))
        assert len(out) == 5
        for a, b in zip(out, out[1:]):
            ra = tpls[a.template_id].bounding_radius * a.scale
            rb = tpls[b.template_id].bounding_radius * b.scale
            d = np.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
            assert d < ra + rb

    def test_k_validation(self):
        with pytest.raises(ValueError):
            agglomerate(self._templates(), 0, 0.1, Rng(0))


def small_recipe(**overrides):
    base = dict(
        name="test",
        extent=128.0,
        base_resolution=128,
        nm_per_px=1.0,
        substrate_albedo=0.2,
        light_direction=(0.0, 0.0, 1.0),
        particle_count=(5, 10),
        scale_jitter=(0.9, 1.1),
        min_separation=12.0,
        zoom_range=(0.8, 1.0),
        brightness_range=(0.8, 1.2),
        templates=(
            ParticleTemplate("s1", Sphere(5.0), Diffuse(0.75)),
            ParticleTemplate("s2", Sphere(3.0), Diffuse(0.7)),
        ),
        weights=(0.5, 0.5),
    )
    base.update(overrides)
    return Recipe(**base)


class TestBuildScene:
    def test_deterministic_serialization(self):
        r = small_recipe()
        a = scene_to_json(build_scene(r, Rng(77).fork("scene/0")))
        b = scene_to_json(build_scene(r, Rng(77).fork("scene/0")))
        assert a == b

    def test_brightness_statistics(self):
        r = small_recipe(particle_count=(1, 2), min_separation=0.0)
        vals = [
            build_scene(r, Rng(1000 + i).fork("s")).brightness for i in range(1000)
        ]
        vals = np.asarray(vals)
        assert vals.min() >= 0.8 and vals.max() <= 1.2
        assert abs(vals.mean() - 1.0) <= 0.03

    def test_no_clusters_respects_min_separation(self):
        r = small_recipe(particle_count=(8, 8), cluster_probability=0.0)
        s = build_scene(r, Rng(5).fork("scene/3"))
        pos = np.array([i.position[:2] for i in s.instances])
        n = len(pos)
        for i in range(n):
            for j in range(i + 1, n):
                assert np.hypot(*(pos[i] - pos[j])) >= r.min_separation

    def test_concentrated_weights(self):
        r = small_recipe(weights=(1.0, 0.0), particle_count=(10, 10))
        s = build_scene(r, Rng(6).fork("x"))
        assert all(i.template_id == "s1" for i in s.instances)

    def test_instances_within_extent_and_crop_contained(self):
        r = small_recipe(cluster_probability=0.5, cluster_size=(2, 3))
        for seed in range(10):
            s = build_scene(r, Rng(seed).fork("scene"))
            for inst in s.instances:
                assert 0.0 <= inst.position[0] <= r.extent
                assert 0.0 <= inst.position[1] <= r.extent
            assert s.crop.x0 >= 0 and s.crop.y0 >= 0
            assert s.crop.x0 + s.crop.width <= r.extent + 1e-9
            assert s.crop.y0 + s.crop.height <= r.extent + 1e-9

    def test_sink_keeps_shapes_partially_above(self):
        r = small_recipe(particle_count=(20, 20), min_separation=0.0)
        s = build_scene(r, Rng(8).fork("scene"))
        by_id = {t.id: t for t in s.templates}
        for inst in s.instances:
            rad = by_id[inst.template_id].shape.radius * inst.scale
            assert inst.position[2] >= 0.7 * rad - 1e-9
            assert inst.position[2] <= rad + 1e-9


class TestRecipeSerialization:
    @pytest.mark.parametrize("factory", [sio2_recipe, tio2_recipe, ag_recipe])
    def test_round_trip(self, factory):
        r = factory()
        d = recipe_to_dict(r)
        r2 = recipe_from_dict(d)
        assert recipe_to_json(r2) == recipe_to_json(r)

    def test_scene_round_trip(self):
        s = build_scene(small_recipe(), Rng(3).fork("scene/1"))
        s2 = scene_from_dict(scene_to_dict(s))
        assert scene_to_json(s2) == scene_to_json(s)

    def test_recipe_validation(self):
        with pytest.raises(ValueError):
            small_recipe(weights=(0.0, 0.0))
        with pytest.raises(ValueError):
            small_recipe(particle_count=(10, 5))
        with pytest.raises(ValueError):
            small_recipe(zoom_range=(0.0, 0.5))
