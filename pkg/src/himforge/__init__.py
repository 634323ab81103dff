"""himforge: synthetic nanoparticle micrograph foundry and segmentation metrology."""

from .core import (
    BinaryMask,
    GrayImage,
    LabelMap,
    PixelScale,
    Rng,
    decode_image,
    encode_image,
    fork_rng,
)

__all__ = [
    "BinaryMask",
    "GrayImage",
    "LabelMap",
    "PixelScale",
    "Rng",
    "decode_image",
    "encode_image",
    "fork_rng",
]

__version__ = "0.1.0"
