"""Training loop and inference.

Per epoch: a fixed number of mini-batch steps on random augmented patches,
then a prediction of the validation image written as a 16-bit probability
PNG under predictions/epoch_<k>/validation.png, a checkpoint under
checkpoints/, and a (epoch, train_loss) row in losses.csv. Output files are
written atomically, so a crashed run never leaves half artifacts.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .config import EpochArtifacts, TrainConfig
from .data import (
    ManifestDataset,
    atomic_write,
    clahe,
    probability_png_bytes,
    read_gray16,
    sample_batch,
)
from .model import UNet, build_model


def predict(
    model: UNet,
    image: np.ndarray,
    tile: int = 512,
    margin: int = 64,
) -> np.ndarray:
    """Full-image probability map in (0, 1).

    Images are padded (replicate) to the model's downsampling factor; inputs
    larger than `tile` are predicted in tiles overlapping by 2*margin. Each
    tile's outer margin is discarded before the remaining overlaps are
    averaged: logits within a margin of a tile border carry receptive-field
    truncation bias, and keeping them would make tiled inference visibly
    disagree with whole-image inference.
    """
    model.eval()
    h, w = image.shape
    factor = model.downsample_factor
    with torch.no_grad():
        if max(h, w) <= tile:
            return _predict_padded(model, image, factor)
        if not (0 < 2 * margin < tile):
            raise ValueError("margin must satisfy 0 < 2*margin < tile")
        logits = np.zeros((h, w), dtype=np.float64)
        weight = np.zeros((h, w), dtype=np.float64)
        step = tile - 2 * margin
        ys = sorted({min(y, max(0, h - tile)) for y in range(0, h, step)})
        xs = sorted({min(x, max(0, w - tile)) for x in range(0, w, step)})
        for y in ys:
            for x in xs:
                sub = image[y : y + tile, x : x + tile]
                part = _predict_padded(model, sub, factor, return_logits=True)
                ky0 = 0 if y == 0 else margin
                kx0 = 0 if x == 0 else margin
                ky1 = part.shape[0] if y + tile >= h else part.shape[0] - margin
                kx1 = part.shape[1] if x + tile >= w else part.shape[1] - margin
                logits[y + ky0 : y + ky1, x + kx0 : x + kx1] += part[ky0:ky1, kx0:kx1]
                weight[y + ky0 : y + ky1, x + kx0 : x + kx1] += 1.0
        return _sigmoid(logits / weight)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _predict_padded(model: UNet, image: np.ndarray, factor: int, return_logits=False):
    h, w = image.shape
    ph = (factor - h % factor) % factor
    pw = (factor - w % factor) % factor
    x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None, None]
    if ph or pw:
        x = nn.functional.pad(x, (0, pw, 0, ph), mode="replicate")
    logits = model(x)[0, 0, :h, :w].numpy().astype(np.float64)
    if return_logits:
        return logits
    return _sigmoid(logits)


def train(config: TrainConfig) -> list[EpochArtifacts]:
    """Run the full schedule; returns one artifact record per epoch."""
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    dataset = ManifestDataset(config.manifest)
    val_path = Path(config.validation_image)
    if not val_path.exists():
        raise FileNotFoundError(f"validation image not found: {val_path}")
    val_img = clahe(read_gray16(val_path), config.clahe_tiles, config.clahe_clip)

    out = Path(config.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "predictions").mkdir(parents=True, exist_ok=True)

    model = build_model(config.width_multiplier)
    if config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=config.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()

    artifacts: list[EpochArtifacts] = []
    cache: dict = {}
    losses_rows = []
    for epoch in range(config.epochs):
        model.train()
        total = 0.0
        for _ in range(config.iterations_per_epoch):
            xs, ys = sample_batch(dataset, config, rng, cache)
            xb = torch.from_numpy(xs)
            yb = torch.from_numpy(ys)
            opt.zero_grad()
            loss = loss_fn(model(xb), yb)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise RuntimeError(f"non-finite loss ({value}) at epoch {epoch}")
            loss.backward()
            opt.step()
            total += value
        mean_loss = total / config.iterations_per_epoch

        prob = predict(model, val_img)
        pred_dir = out / "predictions" / f"epoch_{epoch}"
        pred_dir.mkdir(parents=True, exist_ok=True)
        map_path = pred_dir / "validation.png"
        atomic_write(map_path, probability_png_bytes(prob))

        ckpt_path = out / "checkpoints" / f"epoch_{epoch}.pt"
        buf = io.BytesIO()
        torch.save(
            {"model": model.state_dict(), "width_multiplier": config.width_multiplier}, buf
        )
        atomic_write(ckpt_path, buf.getvalue())

        losses_rows.append((epoch, mean_loss))
        _write_losses(out / "losses.csv", losses_rows)
        artifacts.append(
            EpochArtifacts(
                epoch=epoch,
                checkpoint=str(ckpt_path.relative_to(out)),
                validation_map=str(map_path.relative_to(out)),
                train_loss=mean_loss,
            )
        )
        print(f"epoch {epoch}: train_loss {mean_loss:.4f}", flush=True)
    return artifacts


def _write_losses(path: Path, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "train_loss"])
    writer.writerows(rows)
    atomic_write(path, buf.getvalue().encode("utf-8"))


def load_checkpoint(path) -> UNet:
    state = torch.load(path, map_location="cpu", weights_only=True)
    model = build_model(state["width_multiplier"])
    model.load_state_dict(state["model"])
    model.eval()
    return model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="himtrain", description="Desk-scale U-Net trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train against a himforge manifest")
    t.add_argument("--config", help="TrainConfig JSON file")
    t.add_argument("--manifest")
    t.add_argument("--val-image", dest="validation_image")
    t.add_argument("--out", dest="out_dir")
    t.add_argument("--epochs", type=int)
    t.add_argument("--iterations", type=int, dest="iterations_per_epoch")
    t.add_argument("--patch", type=int, dest="patch_size")
    t.add_argument("--batch", type=int, dest="batch_size")
    t.add_argument("--lr", type=float, dest="learning_rate")
    t.add_argument("--width", type=float, dest="width_multiplier")
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--seed", type=int)

    p = sub.add_parser("predict", help="predict probability maps with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clahe-tiles", type=int, default=4)
    p.add_argument("--clahe-clip", type=float, default=1.5)

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            base = {}
            if args.config:
                base = TrainConfig.from_json(args.config).__dict__.copy()
            for key in (
                "manifest",
                "validation_image",
                "out_dir",
                "epochs",
                "iterations_per_epoch",
                "patch_size",
                "batch_size",
                "learning_rate",
                "width_multiplier",
                "optimizer",
                "seed",
            ):
                val = getattr(args, key, None)
                if val is not None:
                    base[key] = val
            config = TrainConfig(**base)
            train(config)
            return 0
        if args.command == "predict":
            model = load_checkpoint(args.checkpoint)
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            files = sorted(Path(args.images).glob("*.png"))
            if not files:
                raise FileNotFoundError(f"no PNG files in {args.images}")
            for f in files:
                img = clahe(read_gray16(f), args.clahe_tiles, args.clahe_clip)
                prob = predict(model, img)
                atomic_write(out / f.name, probability_png_bytes(prob))
            print(f"predicted {len(files)} probability maps -> {out}")
            return 0
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
