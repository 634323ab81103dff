"""Dataset manifest: an append-friendly JSON-lines record binding every
image/label pair to its seed lineage, pixel scale, and recipe, so any entry
can be regenerated bit-identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .scenegen import canonical_json

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    image: str  # path relative to the manifest
    label: str
    scene: dict  # canonical SceneSpec dict
    degrade: dict  # {"target": px, "sigma": float}
    lineage: dict  # fork labels used for the scene and its noise

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "image": self.image,
            "label": self.label,
            "scene": self.scene,
            "degrade": self.degrade,
            "lineage": self.lineage,
        }

    @staticmethod
    def from_dict(d: dict) -> "ManifestEntry":
        return ManifestEntry(
            d["index"], d["image"], d["label"], d["scene"], d["degrade"], d["lineage"]
        )


def recipe_hash(recipe_dict: dict) -> str:
    return hashlib.sha256(canonical_json(recipe_dict).encode("utf-8")).hexdigest()


@dataclass
class DatasetManifest:
    master_seed: int
    recipe_ref: str
    recipe: dict
    nm_per_px: float  # effective scale of the shipped (degraded) images
    version: int = MANIFEST_VERSION
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def content_hash(self) -> str:
        return recipe_hash(self.recipe)

    def header_dict(self) -> dict:
        return {
            "kind": "header",
            "version": self.version,
            "master_seed": self.master_seed,
            "recipe_ref": self.recipe_ref,
            "recipe_hash": self.content_hash,
            "recipe": self.recipe,
            "nm_per_px": self.nm_per_px,
        }

    def write(self, path) -> None:
        path = Path(path)
        lines = [canonical_json(self.header_dict())]
        for e in sorted(self.entries, key=lambda e: e.index):
            lines.append(canonical_json(e.to_dict()))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def read(path) -> "DatasetManifest":
        path = Path(path)
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"empty manifest: {path}")
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise ValueError("manifest must start with a header line")
        man = DatasetManifest(
            master_seed=header["master_seed"],
            recipe_ref=header["recipe_ref"],
            recipe=header["recipe"],
            nm_per_px=header["nm_per_px"],
            version=header["version"],
        )
        if header["recipe_hash"] != man.content_hash:
            raise ValueError("manifest recipe hash does not match embedded recipe")
        for ln in lines[1:]:
            man.entries.append(ManifestEntry.from_dict(json.loads(ln)))
        man.validate_indices()
        return man

    def validate_indices(self) -> None:
        got = sorted(e.index for e in self.entries)
        if got != list(range(len(self.entries))):
            raise ValueError("manifest entry indices must be dense from 0")

    def validate_files(self, root) -> None:
        root = Path(root)
        for e in self.entries:
            for rel in (e.image, e.label):
                if not (root / rel).exists():
                    raise FileNotFoundError(f"manifest references missing file {rel}")
