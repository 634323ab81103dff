"""Command-line workflow: synthesis, segmentation, post-processing,
evaluation, statistics, dataset comparison, and gallery emission.

Every subcommand writes a metadata.json recording its exact parameters and
seed lineage; re-running with the same inputs reproduces outputs
byte-identically, at any worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analyze, pipeline, postprocess, segment
from .core import (
    BinaryMask,
    GrayImage,
    LabelMap,
    PixelScale,
    Rng,
    decode_image,
    encode_image,
    read_labelmap_png,
    read_mask_png,
    write_labelmap_png,
    write_mask_png,
)
from .manifest import DatasetManifest, ManifestEntry
from .recipes import BUILTIN_RECIPES
from .render import render_pair
from .scenegen import (
    Recipe,
    build_scene,
    canonical_json,
    recipe_from_dict,
    recipe_to_dict,
    scene_to_dict,
)

DEFAULT_TARGET = 2031
DEFAULT_SIGMA = 0.03


def _workers_default() -> int:
    try:
        return max(1, int(os.environ.get("HIMFORGE_WORKERS", "1")))
    except ValueError:
        return 1


def _load_recipe(ref: str) -> tuple[Recipe, str]:
    if ref in BUILTIN_RECIPES:
        return BUILTIN_RECIPES[ref](), ref
    path = Path(ref)
    recipe = recipe_from_dict(json.loads(path.read_text(encoding="utf-8")))
    return recipe, str(path)


def _write_metadata(out_dir: Path, payload: dict) -> None:
    (out_dir / "metadata.json").write_text(canonical_json(payload) + "\n", encoding="utf-8")


def _list_pngs(d: Path) -> list[Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FileNotFoundError(f"no PNG files in {d}")
    return files


_INDEX_RE = re.compile(r"(\d+)(?=\D*$)")


def _index_of(path: Path) -> int | None:
    m = _INDEX_RE.search(path.stem)
    return int(m.group(1)) if m else None


def _pair_files(a: list[Path], b: list[Path]) -> list[tuple[Path, Path]]:
    """Pair by the trailing integer in the stem; fall back to sorted order."""
    ia = {_index_of(p): p for p in a}
    ib = {_index_of(p): p for p in b}
    if None not in ia and None not in ib and len(ia) == len(a) and len(ib) == len(b):
        common = sorted(set(ia) & set(ib))
        if common:
            return [(ia[i], ib[i]) for i in common]
    if len(a) != len(b):
        raise ValueError("cannot pair prediction and ground-truth files")
    return list(zip(a, b))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _synth_one(recipe_dict: dict, seed: int, index: int, target: int, sigma: float, out: str) -> dict:
    recipe = recipe_from_dict(recipe_dict)
    master = Rng(seed)
    scene = build_scene(recipe, master.fork(f"scene/{index}"))
    rendered = render_pair(scene)
    degraded = pipeline.degrade(rendered.beauty, target, sigma, master.fork(f"degrade/{index}"))
    label = pipeline.resize_nearest_mask(rendered.label_mask, target, target)
    out_dir = Path(out)
    image_rel = f"images/img_{index:05d}.png"
    label_rel = f"labels/lab_{index:05d}.png"
    (out_dir / image_rel).write_bytes(encode_image(degraded, 16))
    (out_dir / label_rel).write_bytes(write_mask_png(label))
    return ManifestEntry(
        index=index,
        image=image_rel,
        label=label_rel,
        scene=scene_to_dict(scene),
        degrade={"target": target, "sigma": sigma},
        lineage={"scene": f"scene/{index}", "noise": f"degrade/{index}"},
    ).to_dict()


def _cmd_synth(args) -> int:
    recipe, ref = _load_recipe(args.recipe)
    out_dir = Path(args.out)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    recipe_dict = recipe_to_dict(recipe)
    jobs = [
        (recipe_dict, args.seed, i, args.target, args.sigma, str(out_dir))
        for i in range(args.count)
    ]
    if args.workers > 1 and args.count > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            entries = list(pool.map(_synth_one, *zip(*jobs)))
    else:
        entries = [_synth_one(*j) for j in jobs]
    man = DatasetManifest(
        master_seed=args.seed,
        recipe_ref=ref,
        recipe=recipe_dict,
        nm_per_px=recipe.nm_per_px * recipe.base_resolution / args.target,
    )
    man.entries = [ManifestEntry.from_dict(e) for e in entries]
    man.write(out_dir / "manifest.jsonl")
    man.validate_files(out_dir)
    _write_metadata(
        out_dir,
        {
            "command": "synth",
            "recipe_ref": ref,
            "recipe_hash": man.content_hash,
            "count": args.count,
            "seed": args.seed,
            "target": args.target,
            "sigma": args.sigma,
        },
    )
    print(f"synthesized {args.count} image/label pairs -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------


def _cmd_segment(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.baseline:
        if not args.images:
            raise ValueError("--baseline requires --images DIR")
        files = _list_pngs(Path(args.images))
        params = segment.BaselineParams(
            clahe_tiles=args.clahe_tiles,
            clahe_clip=args.clahe_clip,
            smoothing_radius=args.smooth_radius,
            smoothing_passes=args.smooth_passes,
            invert=args.invert,
        )
        mode = "baseline"
    else:
        if not args.probmaps:
            raise ValueError("segment needs --baseline with --images, or --probmaps")
        files = _list_pngs(Path(args.probmaps))
        params = None
        mode = "probmaps"
    for f in files:
        img = decode_image(f.read_bytes())
        if params is not None:
            try:
                prob = segment.baseline_segment(img, params)
            except segment.DegenerateHistogramError as exc:
                print(f"warning: {f.name}: {exc}; writing empty mask", file=sys.stderr)
                prob = GrayImage(np.zeros((img.height, img.width)))
        else:
            prob = img
        mask = segment.threshold_probability(prob, args.threshold)
        (out_dir / f"{f.stem}.png").write_bytes(write_mask_png(mask))
    _write_metadata(
        out_dir,
        {
            "command": "segment",
            "mode": mode,
            "threshold": args.threshold,
            "inputs": [f.name for f in files],
            "baseline": None
            if params is None
            else {
                "clahe_tiles": params.clahe_tiles,
                "clahe_clip": params.clahe_clip,
                "clahe_bins": params.clahe_bins,
                "smoothing_radius": params.smoothing_radius,
                "smoothing_passes": params.smoothing_passes,
                "invert": params.invert,
            },
        },
    )
    print(f"segmented {len(files)} images -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# post
# ---------------------------------------------------------------------------


def _post_one(mask_file: str, min_area: int, dynamic: float, normalized: bool, connectivity: int, out: str) -> dict:
    f = Path(mask_file)
    mask = read_mask_png(f.read_bytes())
    params = postprocess.WatershedParams(dynamic, normalized, connectivity)
    labels = postprocess.postprocess_chain(mask, min_area, params)
    out_dir = Path(out)
    (out_dir / f"{f.stem}.png").write_bytes(write_labelmap_png(labels))
    sidecar = {
        "image": f.name,
        "components": labels.count,
        "min_area": min_area,
        "dynamic": dynamic,
        "normalized": normalized,
        "connectivity": connectivity,
    }
    (out_dir / f"{f.stem}.json").write_text(canonical_json(sidecar) + "\n", encoding="utf-8")
    return sidecar


def _cmd_post(args) -> int:
    files = _list_pngs(Path(args.masks))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (str(f), args.min_area, args.dynamic, args.normalized, args.connectivity, str(out_dir))
        for f in files
    ]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            sidecars = list(pool.map(_post_one, *zip(*jobs)))
    else:
        sidecars = [_post_one(*j) for j in jobs]
    _write_metadata(
        out_dir,
        {
            "command": "post",
            "min_area": args.min_area,
            "dynamic": args.dynamic,
            "normalized": args.normalized,
            "connectivity": args.connectivity,
            "images": [s["image"] for s in sidecars],
        },
    )
    print(f"post-processed {len(files)} masks -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _read_any_mask(path: Path) -> BinaryMask:
    """Binary masks are 8-bit {0,255}; 16-bit label maps count ids > 0."""
    data = path.read_bytes()
    try:
        labels = read_labelmap_png(data)
        return BinaryMask(labels.ids > 0)
    except Exception:
        return read_mask_png(data)


def _cmd_eval(args) -> int:
    preds = _list_pngs(Path(args.pred))
    gts = _list_pngs(Path(args.gt))
    pairs = _pair_files(preds, gts)
    per_image = []
    pooled = analyze.ConfusionCounts(0, 0, 0, 0)
    for pf, gf in pairs:
        pred = _read_any_mask(pf)
        gt = _read_any_mask(gf)
        counts = analyze.confusion(pred, gt)
        rep = analyze.metrics(counts)
        pooled = analyze.ConfusionCounts(
            pooled.tp + counts.tp,
            pooled.tn + counts.tn,
            pooled.fp + counts.fp,
            pooled.fn + counts.fn,
        )
        per_image.append({"pred": pf.name, "gt": gf.name, **rep.to_dict()})
    defined = [r["f1"] for r in per_image if r["f1"] is not None]
    aggregate = {
        "mean_f1": float(np.mean(defined)) if defined else None,
        "mean_precision": _mean_defined(per_image, "precision"),
        "mean_recall": _mean_defined(per_image, "recall"),
        "mean_accuracy": _mean_defined(per_image, "accuracy"),
        "pooled": analyze.metrics(pooled).to_dict(),
        "images": len(per_image),
    }
    report = {"per_image": per_image, "aggregate": aggregate}
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    mf = aggregate["mean_f1"]
    print(f"evaluated {len(per_image)} pairs, mean F1 = {mf if mf is None else round(mf, 4)}")
    return 0


def _mean_defined(rows: list[dict], key: str) -> float | None:
    vals = [r[key] for r in rows if r[key] is not None]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def _read_labels_or_mask(path: Path, connectivity: int) -> LabelMap:
    data = path.read_bytes()
    labels = read_labelmap_png(data)
    arr = labels.ids
    if arr.max() == 255 and set(np.unique(arr).tolist()) <= {0, 255}:
        # an 8-bit binary mask: label it
        return postprocess.connected_components(BinaryMask(arr > 0), connectivity)
    return labels


def _cmd_stats(args) -> int:
    from .report import save_size_histogram_figure

    files = _list_pngs(Path(args.labels))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = PixelScale(args.nm_per_px)
    gt_files = _list_pngs(Path(args.gt)) if args.gt else None
    pairs = _pair_files(files, gt_files) if gt_files else [(f, None) for f in files]
    rows = []
    for f, gf in pairs:
        labels = _read_labels_or_mask(f, args.connectivity)
        stats = analyze.component_stats(labels, scale)
        hist = analyze.size_histogram(stats, args.hist_bin)
        doc = {
            "image": f.name,
            "n_particles": hist.n_particles,
            "histogram": hist.to_dict(),
            "components": [s.to_dict() for s in stats],
        }
        f1 = None
        if gf is not None:
            gt = _read_any_mask(gf)
            rep = analyze.metrics(analyze.confusion(BinaryMask(labels.ids > 0), gt))
            f1 = rep.f1
            doc["f1"] = f1
        (out_dir / f"{f.stem}_stats.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        save_size_histogram_figure(hist, f.stem, out_dir / f"{f.stem}_hist.png")
        sizes = [s.sqrt_area_nm for s in stats]
        rows.append(
            {
                "image": f.stem,
                "n_particles": len(stats),
                "mean_sqrt_area_nm": float(np.mean(sizes)) if sizes else "",
                "median_sqrt_area_nm": float(np.median(sizes)) if sizes else "",
                "f1": "" if f1 is None else f1,
            }
        )
    with (out_dir / "stats.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["image", "n_particles", "mean_sqrt_area_nm", "median_sqrt_area_nm", "f1"],
        )
        writer.writeheader()
        writer.writerows(rows)
    _write_metadata(
        out_dir,
        {
            "command": "stats",
            "nm_per_px": args.nm_per_px,
            "hist_bin_nm": args.hist_bin,
            "connectivity": args.connectivity,
            "images": [r["image"] for r in rows],
        },
    )
    print(f"collected statistics for {len(rows)} label maps -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def _patch_grid(width: int, height: int, size: int) -> list[tuple[int, int]]:
    return [
        (r * size, c * size) for r in range(height // size) for c in range(width // size)
    ]


def _gather_patches(
    images: list[Path],
    labels_dir: Path | None,
    size: int,
    mode: str,
    per_image: int,
    rng: Rng,
    connectivity: int = 8,
):
    """Returns (features, kinds): one feature vector + particle/background tag
    per patch. Sequential mode tiles; random mode draws per_image patches."""
    feats = []
    kinds = []
    label_files = _list_pngs(labels_dir) if labels_dir else None
    pairs = _pair_files(images, label_files) if label_files else [(f, None) for f in images]
    for f, lf in pairs:
        img = decode_image(f.read_bytes())
        mask = _read_any_mask(lf) if lf is not None else None
        if img.width < size or img.height < size:
            raise ValueError(f"{f.name} is smaller than the patch size {size}")
        if mode == "sequential":
            positions = _patch_grid(img.width, img.height, size)
        else:
            positions = [
                (
                    int(rng.integers(0, img.height - size + 1)),
                    int(rng.integers(0, img.width - size + 1)),
                )
                for _ in range(per_image)
            ]
        for y, x in positions:
            patch = GrayImage(img.pixels[y : y + size, x : x + size])
            feats.append(analyze.patch_features(patch))
            if mask is None:
                kinds.append("all")
            else:
                frac = float(mask.bits[y : y + size, x : x + size].mean())
                kinds.append("particle" if frac >= 0.15 else "background")
    return feats, kinds


def _cmd_compare(args) -> int:
    from .report import save_embedding_figure

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = Rng(args.seed, ("compare",))
    images_a = _list_pngs(Path(args.set_a))
    images_b = _list_pngs(Path(args.set_b))
    feats_a, kinds_a = _gather_patches(
        images_a, Path(args.labels_a) if args.labels_a else None, args.patch, "sequential", 0, rng
    )
    per_image_b = max(1, len(feats_a) // max(1, len(images_b)))
    feats_b, kinds_b = _gather_patches(
        images_b,
        Path(args.labels_b) if args.labels_b else None,
        args.patch,
        "random",
        per_image_b,
        rng.fork("random-patches"),
    )
    feats = np.asarray(feats_a + feats_b)
    sources = ["real"] * len(feats_a) + ["synthetic"] * len(feats_b)
    kinds = kinds_a + kinds_b
    basis, projected, retained = analyze.pca(feats, args.variance)
    result = analyze.tsne(projected, args.perplexity, args.iterations, rng.fork("tsne"))
    pts = [
        (sources[i], kinds[i], float(result.positions[i, 0]), float(result.positions[i, 1]))
        for i in range(len(sources))
    ]
    with (out_dir / "embedding.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "kind", "x", "y"])
        writer.writerows(pts)
    save_embedding_figure(pts, out_dir / "embedding.png")
    _write_metadata(
        out_dir,
        {
            "command": "compare",
            "feature_extractor": "hand-crafted features (128-d)",
            "patch": args.patch,
            "pca_components": int(basis.shape[1]),
            "pca_retained_variance": retained,
            "perplexity": args.perplexity,
            "iterations": args.iterations,
            "seed": args.seed,
            "kl_initial": result.kl_initial,
            "kl_final": result.kl_final,
            "points_real": len(feats_a),
            "points_synthetic": len(feats_b),
        },
    )
    print(
        f"compared {len(feats_a)}+{len(feats_b)} patches, PCA {basis.shape[1]} comps "
        f"({retained:.3f} var) -> {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# gallery
# ---------------------------------------------------------------------------


def _cmd_gallery(args) -> int:
    images = _list_pngs(Path(args.images))
    masks = _list_pngs(Path(args.masks)) if args.masks else None
    labelmaps = _list_pngs(Path(args.labelmaps)) if args.labelmaps else None
    metrics_by_name: dict[str, analyze.MetricsReport] = {}
    if args.metrics:
        doc = json.loads(Path(args.metrics).read_text(encoding="utf-8"))
        for row in doc.get("per_image", []):
            c = row["counts"]
            counts = analyze.ConfusionCounts(c["tp"], c["tn"], c["fp"], c["fn"])
            metrics_by_name[Path(row["pred"]).stem] = analyze.metrics(counts)
    entries = []
    mask_pairs = dict(_pair_files(images, masks)) if masks else {}
    label_pairs = dict(_pair_files(images, labelmaps)) if labelmaps else {}
    for f in images:
        img = decode_image(f.read_bytes())
        mask = _read_any_mask(mask_pairs[f]) if f in mask_pairs else None
        labels = None
        if f in label_pairs:
            labels = _read_labels_or_mask(label_pairs[f], 8)
        report = None
        if mask is not None and mask_pairs[f].stem in metrics_by_name:
            report = metrics_by_name[mask_pairs[f].stem]
        entries.append(analyze.GalleryEntry(f.stem, img, mask, labels, report))
    index = analyze.emit_gallery(entries, args.out)
    print(f"gallery with {len(entries)} panels -> {index}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="himforge",
        description="Synthetic nanoparticle micrograph foundry and segmentation metrology",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate scenes, render pairs, degrade, write manifest")
    s.add_argument("--recipe", required=True, help="recipe JSON path or builtin name (sio2/tio2/ag)")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--target", type=int, default=DEFAULT_TARGET, help="degraded output size (px)")
    s.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="additive noise sigma")
    s.add_argument("--workers", type=int, default=_workers_default())
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("segment", help="threshold probability maps or run the baseline segmenter")
    s.add_argument("--baseline", action="store_true", help="use the classical baseline segmenter")
    s.add_argument("--images", help="input images for --baseline")
    s.add_argument("--probmaps", help="probability-map PNG directory (16-bit)")
    s.add_argument("--threshold", type=float, default=segment.DEFAULT_THRESHOLD)
    s.add_argument("--out", required=True)
    s.add_argument("--clahe-tiles", type=int, default=4)
    s.add_argument("--clahe-clip", type=float, default=1.5)
    s.add_argument("--smooth-radius", type=int, default=1)
    s.add_argument("--smooth-passes", type=int, default=1)
    s.add_argument("--invert", action="store_true")
    s.set_defaults(func=_cmd_segment, baseline_images=None)

    s = sub.add_parser("post", help="area opening + distance-transform watershed")
    s.add_argument("--masks", required=True)
    s.add_argument("--min-area", type=int, required=True, dest="min_area")
    s.add_argument("--dynamic", type=float, required=True)
    s.add_argument("--normalized", action="store_true")
    s.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=_workers_default())
    s.set_defaults(func=_cmd_post)

    s = sub.add_parser("eval", help="confusion + metrics per image and aggregate")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("stats", help="component statistics and size histograms")
    s.add_argument("--labels", required=True)
    s.add_argument("--nm-per-px", type=float, required=True, dest="nm_per_px")
    s.add_argument("--hist-bin", type=float, default=5.0, dest="hist_bin")
    s.add_argument("--gt", help="optional ground-truth masks for an F1 column")
    s.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_stats)

    s = sub.add_parser("compare", help="patches -> features -> PCA -> t-SNE")
    s.add_argument("--set-a", required=True, dest="set_a", help="reference set (sequential tiling)")
    s.add_argument("--set-b", required=True, dest="set_b", help="comparison set (random patches)")
    s.add_argument("--labels-a", dest="labels_a", help="optional masks for set A kind tags")
    s.add_argument("--labels-b", dest="labels_b", help="optional masks for set B kind tags")
    s.add_argument("--patch", type=int, default=144)
    s.add_argument("--variance", type=float, default=0.9)
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iterations", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_compare)

    s = sub.add_parser("gallery", help="static HTML contact sheet with overlays")
    s.add_argument("--images", required=True)
    s.add_argument("--masks")
    s.add_argument("--labelmaps")
    s.add_argument("--metrics", help="eval report JSON for per-entry metric rows")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_gallery)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
