"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` for the per-criterion lines.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from himforge.analyze import (
    component_stats,
    confusion,
    metrics,
    pca,
    size_histogram,
    tsne,
)
from himforge.cli import main
from himforge.core import BinaryMask, PixelScale, Rng
from himforge.postprocess import (
    WatershedParams,
    area_opening,
    connected_components,
    distance_transform,
    watershed_split,
)
from himforge.render import render_label
from himforge.scenegen import (
    CropRect,
    DirtSpec,
    EdgeEffect,
    Instance,
    ParticleTemplate,
    Recipe,
    SceneSpec,
    Sphere,
    build_scene,
    sample_distribution,
)
from oracles import (
    brute_area_filter,
    brute_edt_sq,
    flood_fill_components,
    random_mask,
    silhouette_score,
)
from test_postprocess import disc_mask


def ok(name: str) -> None:
    print(f"[ACCEPTANCE] {name}: PASS")


class TestMetricsExactness:
    def test_metrics_match_naive_tally(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            pred = random_mask(rng, 64, 64, density=float(rng.uniform(0.2, 0.8)))
            gt = random_mask(rng, 64, 64, density=float(rng.uniform(0.2, 0.8)))
            # naive per-pixel tally oracle
            tp = tn = fp = fn = 0
            for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
                if p and g:
                    tp += 1
                elif p and not g:
                    fp += 1
                elif not p and g:
                    fn += 1
                else:
                    tn += 1
            c = confusion(BinaryMask(pred), BinaryMask(gt))
            assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
            rep = metrics(c)
            assert abs(rep.accuracy - (tp + tn) / 4096) < 1e-12
            if tp + fp:
                assert abs(rep.precision - tp / (tp + fp)) < 1e-12
            if tp + fn:
                assert abs(rep.recall - tp / (tp + fn)) < 1e-12
            if 2 * tp + fp + fn:
                assert abs(rep.f1 - 2 * tp / (2 * tp + fp + fn)) < 1e-12
        ok("metrics exactness (50 x 64^2 vs naive tally)")


class TestMorphologyOracles:
    def test_three_operations_match_brute_force(self):
        start = time.time()
        rng = np.random.default_rng(99)
        for trial in range(100):
            h = int(rng.integers(32, 65))
            w = int(rng.integers(32, 65))
            m = random_mask(rng, h, w, density=float(rng.uniform(0.3, 0.55)))
            m[0, 0] = False  # keep at least one background pixel

            # both sides take sqrt of integer squared distances, so equality
            # of the underlying integers makes the floats bit-identical
            d = distance_transform(BinaryMask(m)).values
            assert np.array_equal(d, np.sqrt(brute_edt_sq(m))), trial

            conn = int(rng.choice([4, 8]))
            lab = connected_components(BinaryMask(m), conn)
            assert np.array_equal(lab.ids, flood_fill_components(m, conn)), trial

            min_area = int(rng.integers(1, 40))
            opened = area_opening(BinaryMask(m), min_area, conn)
            assert np.array_equal(opened.bits, brute_area_filter(m, min_area, conn)), trial
        elapsed = time.time() - start
        assert elapsed < 60.0
        ok(f"morphology oracle suite (100 masks, {elapsed:.1f}s < 60s)")


class TestWatershedSeparation:
    def test_two_disc_fixture(self):
        m = BinaryMask(disc_mask(44, 60, [(22, 22), (22, 38)], 10))
        dmax = distance_transform(m).values.max()
        sweeps = {}
        for dyn in (0.0, 1.0, 2.0, float(dmax) + 1.0, 2.0 * float(dmax)):
            lab = watershed_split(m, WatershedParams(dyn, normalized=False))
            sweeps[dyn] = lab.count
            assert np.array_equal(lab.ids > 0, m.bits), f"support changed at dynamic {dyn}"
        assert sweeps[2.0] == 2
        assert sweeps[float(dmax) + 1.0] == 1
        assert sweeps[2.0 * float(dmax)] == 1
        ok("watershed separation (two-disc fixture, support preserved)")


class TestRenderLabelCoherence:
    def test_ccl_count_equals_visible_instances(self):
        tpl = ParticleTemplate("s", Sphere(5.0), EdgeEffect(0.6, 0.5, 1.0))
        extent = 507.0
        max_r = 5.0 * 1.6
        margin = max_r + 2.0
        for seed in range(20):
            rng = Rng(7000 + seed)
            n = int(rng.fork("count").integers(50, 101))
            dist = sample_distribution(
                n, extent - 2 * margin, 2 * max_r + 3.0, (1.0, 1.0), rng.fork("place")
            )
            scales = rng.fork("scales").uniform(0.8, 1.6, n)
            instances = [
                Instance(
                    "s",
                    (float(x) + margin, float(y) + margin, 5.0 * float(s)),
                    float(s),
                    0.0,
                )
                for (x, y, _), s in zip(dist.centers, scales)
            ]
            scene = SceneSpec(
                extent=extent,
                substrate_albedo=0.2,
                templates=(tpl,),
                instances=tuple(instances),
                light_direction=(0.0, 0.0, 1.0),
                brightness=1.0,
                crop=CropRect(0.0, 0.0, extent, extent),
                resolution=507,
                dirt=DirtSpec(enabled=False),
                master_seed=7000 + seed,
                lineage=("coherence",),
            )
            mask, ids = render_label(scene)
            assert ids.count == n, f"scene {seed}: id count {ids.count} != {n}"
            lab = connected_components(mask, 8)
            assert lab.count == n, f"scene {seed}: CCL {lab.count} != {n}"
        ok("render/label coherence (20 scenes, 50-100 spheres, exact counts)")


def _bimodal_recipe():
    return Recipe(
        name="bimodal",
        extent=507.0,
        base_resolution=507,
        nm_per_px=1.0,
        substrate_albedo=0.18,
        light_direction=(0.12, 0.08, 0.99),
        particle_count=(25, 35),
        scale_jitter=(0.98, 1.02),
        min_separation=40.0,
        zoom_range=(1.0, 1.0),
        brightness_range=(0.9, 1.1),
        templates=(
            ParticleTemplate("small", Sphere(8.0), EdgeEffect(0.65, 0.55, 1.0)),
            ParticleTemplate("large", Sphere(17.0), EdgeEffect(0.55, 0.5, 1.0)),
        ),
        weights=(0.5, 0.5),
    )


def _eroded_disc_area(r: float) -> float:
    # area of a disc eroded by the unit square: integral of (r - s(t))^2/2
    # with s(t) = |cos t| + |sin t|
    return math.pi * r * r - 8.0 * r + (2.0 * math.pi + 4.0) / 2.0


class TestBimodalRecovery:
    def test_histogram_peaks_match_design_sizes(self):
        recipe = _bimodal_recipe()
        bin_width = 5.0
        stats = []
        for i in range(6):
            scene = build_scene(recipe, Rng(1234).fork(f"scene/{i}"))
            mask, _ = render_label(scene)
            labels = connected_components(mask, 8)
            stats.extend(component_stats(labels, PixelScale(recipe.nm_per_px)))
        hist = size_histogram(stats, bin_width)
        assert hist.n_particles == sum(hist.counts)
        counts = np.asarray(hist.counts, dtype=float)
        # local maxima: strictly above both neighbors (edges padded with 0)
        padded = np.concatenate([[0.0], counts, [0.0]])
        maxima = [
            k
            for k in range(len(counts))
            if padded[k + 1] > padded[k] and padded[k + 1] >= padded[k + 2] and counts[k] > 0
        ]
        top_two = sorted(sorted(maxima, key=lambda k: -counts[k])[:2])
        design_bins = sorted(
            int(math.sqrt(_eroded_disc_area(r)) // bin_width) for r in (8.0, 17.0)
        )
        assert len(top_two) == 2
        for got, want in zip(top_two, design_bins):
            assert abs(got - want) <= 1
        ok(
            f"bimodal recovery (peaks at bins {top_two}, design {design_bins}, "
            f"N_p={hist.n_particles})"
        )


class TestPcaTsne:
    def test_pca_retained_variance_and_residual_oracle(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(400, 64)) * np.linspace(4, 0.02, 64)
        basis, proj, retained = pca(x, 0.9)
        assert retained >= 0.9
        xc = x - x.mean(axis=0)
        residual = ((xc - proj @ basis.T) ** 2).sum() / (x.shape[0] - 1)
        evals = np.sort(np.linalg.eigvalsh((xc.T @ xc) / (x.shape[0] - 1)))[::-1]
        assert abs(residual - evals[basis.shape[1] :].sum()) < 1e-8
        ok(f"pca (retained {retained:.3f} >= 0.9, residual oracle 1e-8)")

    def test_tsne_two_blob_fixture(self):
        rng = np.random.default_rng(21)
        a = rng.normal(0, 1, (50, 32))
        b = rng.normal(0, 1, (50, 32))
        b[:, 0] += 20.0
        x = np.vstack([a, b])
        labels = np.array([0] * 50 + [1] * 50)
        r1 = tsne(x, perplexity=15.0, iterations=300, rng=Rng(77).fork("tsne"))
        r2 = tsne(x, perplexity=15.0, iterations=300, rng=Rng(77).fork("tsne"))
        assert np.array_equal(r1.positions, r2.positions)
        sil = silhouette_score(r1.positions, labels)
        assert sil > 0.5
        assert r1.kl_final < r1.kl_initial
        ok(f"t-SNE (silhouette {sil:.3f} > 0.5, KL {r1.kl_initial:.3f} -> {r1.kl_final:.3f})")


class TestEndToEndDeskScale:
    def test_pipeline_f1_and_count_accuracy(self, tmp_path):
        start = time.time()
        ds = tmp_path / "ds"
        code = main(
            ["synth", "--recipe", "sio2", "--count", "20", "--seed", "20240901",
             "--out", str(ds), "--target", "1014", "--sigma", "0.03"]
        )
        assert code == 0
        # half the scenes should carry the dirt overlay (probability 0.5)
        from himforge.manifest import DatasetManifest

        man = DatasetManifest.read(ds / "manifest.jsonl")
        dirt_on = sum(1 for e in man.entries if e.scene["dirt"]["enabled"])
        assert 4 <= dirt_on <= 16

        masks = tmp_path / "masks"
        code = main(
            ["segment", "--baseline", "--images", str(ds / "images"),
             "--threshold", "0.51", "--out", str(masks),
             "--smooth-radius", "2", "--smooth-passes", "2"]
        )
        assert code == 0

        # paper's 400 px opening at 2031^2, scaled to the 1014^2 resolution
        min_area = round(400 * (1014 / 2031) ** 2)
        post = tmp_path / "post"
        code = main(
            ["post", "--masks", str(masks), "--min-area", str(min_area),
             "--dynamic", "4", "--normalized", "--out", str(post)]
        )
        assert code == 0

        report = tmp_path / "eval.json"
        code = main(
            ["eval", "--pred", str(masks), "--gt", str(ds / "labels"),
             "--report", str(report)]
        )
        assert code == 0
        doc = json.loads(report.read_text())
        mean_f1 = doc["aggregate"]["mean_f1"]
        assert mean_f1 >= 0.70

        from himforge.core import read_mask_png

        rel_errors = []
        for entry in man.entries:
            stem = Path(entry.label).stem.replace("lab_", "img_")
            sidecar = json.loads((post / f"{stem}.json").read_text())
            gt_mask = read_mask_png((ds / entry.label).read_bytes())
            gt_count = connected_components(gt_mask, 8).count
            rel_errors.append(abs(sidecar["components"] - gt_count) / max(gt_count, 1))
        mean_err = float(np.mean(rel_errors))
        assert mean_err <= 0.10
        elapsed = time.time() - start
        assert elapsed < 300.0
        ok(
            f"end-to-end desk scale (mean F1 {mean_f1:.3f} >= 0.70, "
            f"count err {mean_err:.3f} <= 0.10, {elapsed:.0f}s < 300s)"
        )


class TestDeterminism:
    def test_synth_reruns_and_worker_counts(self, tmp_path):
        def run(out: Path, workers: int) -> dict:
            code = main(
                ["synth", "--recipe", "sio2", "--count", "5", "--seed", "7",
                 "--out", str(out), "--target", "507", "--workers", str(workers)]
            )
            assert code == 0
            return {
                str(p.relative_to(out)): p.read_bytes()
                for p in sorted(out.rglob("*"))
                if p.is_file()
            }

        a = run(tmp_path / "a", 1)
        b = run(tmp_path / "b", 1)
        c = run(tmp_path / "c", 8)
        assert a == b
        assert a == c
        ok("determinism (synth --count 5 --seed 7: reruns and workers 1 vs 8)")
