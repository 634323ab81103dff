import numpy as np
import pytest

from himforge.analyze import confusion, metrics
from himforge.core import BinaryMask, GrayImage, Rng
from himforge.render import render_pair
from himforge.scenegen import build_scene
from himforge.segment import (
    BaselineParams,
    DegenerateHistogramError,
    baseline_segment,
    otsu_threshold,
    sigmoid_map,
    threshold_probability,
)


class TestSigmoid:
    def test_midpoint(self):
        out = sigmoid_map(np.zeros((2, 2)))
        assert np.allclose(out.pixels, 0.5)

    def test_saturation(self):
        out = sigmoid_map(np.full((1, 1), 50.0))
        assert abs(out.pixels[0, 0] - 1.0) < 1e-15
        lo = sigmoid_map(np.full((1, 1), -50.0))
        assert lo.pixels[0, 0] > 0.0

    def test_symmetry(self):
        xs = np.linspace(-8, 8, 33).reshape(3, 11)
        p = sigmoid_map(xs).pixels
        q = sigmoid_map(-xs).pixels
        assert np.allclose(p + q, 1.0, atol=1e-15)

    def test_strictly_increasing_bounded(self):
        xs = np.sort(np.random.default_rng(0).normal(0, 4, 64)).reshape(1, 64)
        p = sigmoid_map(xs).pixels[0]
        assert np.all(np.diff(p) > 0)
        assert p.min() > 0.0 and p.max() < 1.0

    def test_bounded_gate(self):
        with pytest.raises(ValueError):
            sigmoid_map(np.full((2, 2), 3.0), allow_unbounded=False)
        sigmoid_map(np.full((2, 2), 0.7), allow_unbounded=False)


class TestThreshold:
    def test_exactly_051_is_background(self):
        prob = GrayImage(np.full((4, 4), 0.51))
        assert not threshold_probability(prob).bits.any()

    def test_strictly_above(self):
        prob = GrayImage([[0.511, 0.51, 0.509]])
        mask = threshold_probability(prob)
        assert mask.bits.tolist() == [[True, False, False]]

    def test_idempotent_on_binary_map(self):
        m = np.random.default_rng(1).random((8, 8)) > 0.5
        prob = GrayImage(m.astype(float))
        assert np.array_equal(threshold_probability(prob, 0.51).bits, m)

    def test_monotone_in_t(self):
        prob = GrayImage(np.random.default_rng(2).random((16, 16)))
        m1 = threshold_probability(prob, 0.3)
        m2 = threshold_probability(prob, 0.7)
        assert np.all(m1.bits[m2.bits])  # mask(t2) subset of mask(t1)

    def test_invalid_threshold(self):
        prob = GrayImage([[0.5]])
        for t in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                threshold_probability(prob, t)


class TestOtsu:
    def test_two_delta_histogram(self):
        a = np.zeros((10, 10))
        a[:, 5:] = 1.0
        t = otsu_threshold(GrayImage(a))
        assert 0.0 < t < 1.0
        mask = a > t
        assert mask.sum() == 50

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.random((24, 24))
            bins = 64
            t = otsu_threshold(GrayImage(a), bins)
            # independent exhaustive scan over all split points
            idx = np.minimum((a * bins).astype(int), bins - 1).ravel()
            hist = np.bincount(idx, minlength=bins).astype(float)
            centers = (np.arange(bins) + 0.5) / bins
            best_k, best_v = None, -1.0
            for k in range(bins - 1):
                w0 = hist[: k + 1].sum()
                w1 = hist[k + 1 :].sum()
                if w0 == 0 or w1 == 0:
                    continue
                mu0 = (hist[: k + 1] * centers[: k + 1]).sum() / w0
                mu1 = (hist[k + 1 :] * centers[k + 1 :]).sum() / w1
                v = w0 * w1 * (mu0 - mu1) ** 2
                if v > best_v + 1e-12:
                    best_v = v
                    best_k = k
            assert t == pytest.approx(centers[best_k])

    def test_shuffle_invariant(self):
        rng = np.random.default_rng(4)
        a = rng.random(256)
        t1 = otsu_threshold(GrayImage(a.reshape(16, 16)))
        rng.shuffle(a)
        t2 = otsu_threshold(GrayImage(a.reshape(16, 16)))
        assert t1 == t2

    def test_constant_image_error(self):
        with pytest.raises(DegenerateHistogramError):
            otsu_threshold(GrayImage(np.full((8, 8), 0.4)))


class TestBaseline:
    def _clean_scene(self):
        # particles must be large relative to the 1-px label erosion rim,
        # or the rim alone caps the achievable pixel F1
        from test_scenegen import small_recipe
        from himforge.scenegen import EdgeEffect, ParticleTemplate, Sphere

        recipe = small_recipe(
            extent=256.0,
            base_resolution=256,
            light_direction=(0.12, 0.08, 0.99),
            templates=(
                ParticleTemplate("s1", Sphere(24.0), EdgeEffect(0.6, 0.55, 1.0)),
                ParticleTemplate("s2", Sphere(20.0), EdgeEffect(0.55, 0.5, 1.0)),
            ),
            particle_count=(4, 6),
            min_separation=58.0,
            zoom_range=(1.0, 1.0),
            brightness_range=(0.8, 1.2),
        )
        return build_scene(recipe, Rng(31).fork("scene/0"))

    def test_f1_against_own_label(self):
        out = render_pair(self._clean_scene())
        # clean render: near-identity equalization, light smoothing
        prob = baseline_segment(out.beauty, BaselineParams(clahe_clip=1.05))
        pred = threshold_probability(prob, 0.51)
        rep = metrics(confusion(pred, out.label_mask))
        assert rep.f1 is not None and rep.f1 >= 0.9

    def test_deterministic(self):
        out = render_pair(self._clean_scene())
        a = baseline_segment(out.beauty, BaselineParams())
        b = baseline_segment(out.beauty, BaselineParams())
        assert a == b

    def test_binary_probability_output_fixed_point(self):
        out = render_pair(self._clean_scene())
        prob = baseline_segment(out.beauty, BaselineParams())
        assert set(np.unique(prob.pixels).tolist()) <= {0.0, 1.0}
        base = prob.pixels > 0.5
        for t in (0.0, 0.3, 0.51, 0.99):
            assert np.array_equal(threshold_probability(prob, t).bits, base)

    def test_background_only_raises(self):
        img = GrayImage(np.full((64, 64), 0.25))
        with pytest.raises(DegenerateHistogramError):
            baseline_segment(img, BaselineParams())

    def test_invert(self):
        rng = np.random.default_rng(5)
        img = GrayImage(np.clip(rng.normal(0.3, 0.2, (64, 64)), 0, 1))
        a = baseline_segment(img, BaselineParams(invert=False))
        b = baseline_segment(img, BaselineParams(invert=True))
        assert np.array_equal(a.pixels > 0.5, ~(b.pixels > 0.5))
