import io
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def _png16(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.floor(arr * 65535.0 + 0.5).astype(np.uint16)).save(buf, format="PNG")
    return buf.getvalue()


def _png8_mask(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def make_toy_dataset(root: Path, n: int, size: int = 128, seed: int = 0) -> Path:
    """Fabricate disc images + masks + manifest.jsonl per the file contract."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir(parents=True)
    lines = [
        json.dumps(
            {
                "kind": "header",
                "version": 1,
                "master_seed": seed,
                "recipe_ref": "toy",
                "recipe_hash": "0" * 64,
                "recipe": {},
                "nm_per_px": 1.0,
            },
            sort_keys=True,
        )
    ]
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(n):
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(3, 6))):
            r = float(rng.uniform(9, 16))
            cy = float(rng.uniform(r, size - r))
            cx = float(rng.uniform(r, size - r))
            mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img = np.where(mask, 0.75, 0.18)
        img = np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)
        image_rel = f"images/img_{i:05d}.png"
        label_rel = f"labels/lab_{i:05d}.png"
        (root / image_rel).write_bytes(_png16(img))
        (root / label_rel).write_bytes(_png8_mask(mask))
        lines.append(
            json.dumps(
                {
                    "index": i,
                    "image": image_rel,
                    "label": label_rel,
                    "scene": {},
                    "degrade": {"target": size, "sigma": 0.03},
                    "lineage": {},
                },
                sort_keys=True,
            )
        )
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@pytest.fixture()
def toy_dataset(tmp_path):
    return make_toy_dataset(tmp_path / "ds", n=3, size=128, seed=3)
