"""Training configuration and per-epoch artifact records."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class TrainConfig:
    manifest: str
    validation_image: str
    out_dir: str
    patch_size: int = 400
    batch_size: int = 2
    iterations_per_epoch: int = 150
    epochs: int = 500
    learning_rate: float = 0.001
    width_multiplier: float = 1.0
    optimizer: str = "adam"  # "adam" (paper statement) or plain "sgd"
    seed: int = 0
    # augmentation knobs (applied per training patch)
    zoom_range: tuple[float, float] = (0.85, 1.2)
    intensity_scale_range: tuple[float, float] = (0.9, 1.1)
    intensity_shift_range: tuple[float, float] = (-0.05, 0.05)
    noise_sigma: float = 0.02
    clahe_tiles: int = 4
    clahe_clip: float = 1.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.patch_size < 16:
            raise ValueError("patch size must be >= 16")
        if self.epochs < 1 or self.iterations_per_epoch < 1:
            raise ValueError("epochs and iterations must be >= 1")
        if not (self.width_multiplier > 0):
            raise ValueError("width multiplier must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")

    @staticmethod
    def from_json(path) -> "TrainConfig":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in ("zoom_range", "intensity_scale_range", "intensity_shift_range"):
            if key in d:
                d[key] = tuple(d[key])
        return TrainConfig(**d)


@dataclass(frozen=True)
class EpochArtifacts:
    epoch: int
    checkpoint: str
    validation_map: str
    train_loss: float

    def to_dict(self) -> dict:
        return asdict(self)
