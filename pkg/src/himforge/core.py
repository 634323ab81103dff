"""Foundational raster types, lossless grayscale PNG codec, and seeded RNG.

All raster values live in one arithmetic domain: normalized scalars in
[0, 1], independent of file bit depth. Raster objects are immutable value
types (their arrays are read-only); copies never alias.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError


class DecodeError(ValueError):
    """Raised for malformed or unreadable image streams."""


class UnsupportedFormatError(ValueError):
    """Raised for valid images outside the single-channel 8/16-bit contract."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


class GrayImage:
    """2-D grayscale raster with row-major samples in [0, 1]."""

    __slots__ = ("pixels",)

    def __init__(self, pixels) -> None:
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("GrayImage must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("GrayImage samples must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"GrayImage samples must lie in [0, 1], got range "
                f"[{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "pixels", _readonly(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __setattr__(self, name, value):
        raise AttributeError("GrayImage is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


class BinaryMask:
    """Row-major boolean raster; True marks particle pixels."""

    __slots__ = ("bits",)

    def __init__(self, bits) -> None:
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ValueError(f"BinaryMask must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("BinaryMask must be non-empty")
        if arr.dtype != np.bool_:
            uniq = np.unique(arr)
            if not np.all(np.isin(uniq, (0, 1))):
                raise ValueError("BinaryMask values must be boolean or {0, 1}")
        object.__setattr__(self, "bits", _readonly(arr.astype(bool)))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMask is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(
            np.array_equal(self.bits, other.bits)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, on={int(self.bits.sum())})"


class LabelMap:
    """Dense connected-component identifier raster; 0 is background.

    Nonzero ids are exactly {1..count}.
    """

    __slots__ = ("ids", "count")

    def __init__(self, ids) -> None:
        arr = np.asarray(ids)
        if arr.ndim != 2:
            raise ValueError(f"LabelMap must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("LabelMap must be non-empty")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("LabelMap ids must be integers")
        if arr.min() < 0:
            raise ValueError("LabelMap ids must be non-negative")
        present = np.unique(arr)
        nonzero = present[present > 0]
        count = int(nonzero.size)
        if count and not np.array_equal(nonzero, np.arange(1, count + 1)):
            raise ValueError("LabelMap ids must be dense 1..count")
        object.__setattr__(self, "ids", _readonly(arr.astype(np.int64)))
        object.__setattr__(self, "count", count)

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def __setattr__(self, name, value):
        raise AttributeError("LabelMap is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.ids.shape == other.ids.shape and bool(
            np.array_equal(self.ids, other.ids)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"LabelMap({self.width}x{self.height}, count={self.count})"


@dataclass(frozen=True)
class PixelScale:
    """Physical pixel pitch in nanometers per pixel edge."""

    nm_per_px: float

    def __post_init__(self) -> None:
        if not (self.nm_per_px > 0):
            raise ValueError("nm_per_px must be > 0")


# ---------------------------------------------------------------------------
# Deterministic seeded randomness
# ---------------------------------------------------------------------------


class Rng:
    """Deterministic random stream addressed by (master seed, fork lineage).

    Forking with a label yields a child stream that is a pure function of
    (master seed, parent lineage, label); the parent stream is untouched, so
    sibling streams are independent of each other's consumption order. A
    given Rng is meant to be consumed by exactly one worker; parallel code
    forks, never shares.
    """

    __slots__ = ("master_seed", "lineage", "_gen")

    def __init__(self, master_seed: int, lineage: tuple[str, ...] = ()) -> None:
        self.master_seed = int(master_seed)
        self.lineage = tuple(str(x) for x in lineage)
        key = f"{self.master_seed}\x1f" + "\x1f".join(self.lineage)
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        words = np.frombuffer(digest, dtype=np.uint32)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=[int(w) for w in words]))
        )

    def fork(self, label: str) -> "Rng":
        if not label:
            raise ValueError("fork label must be nonempty")
        return Rng(self.master_seed, self.lineage + (str(label),))

    # Thin pass-throughs to the underlying generator: only draws used by the
    # toolkit, so every consumption point is easy to audit.
    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, p=None):
        return self._gen.choice(a, size=size, p=p)

    def shuffle(self, x) -> None:
        self._gen.shuffle(x)

    def __repr__(self) -> str:
        path = "/".join(self.lineage) or "<root>"
        return f"Rng(seed={self.master_seed}, lineage={path})"


def fork_rng(parent: Rng, label: str) -> Rng:
    """Child stream derived from (master seed, parent lineage, label)."""
    return parent.fork(label)


# ---------------------------------------------------------------------------
# PNG codec (single-channel, 8- or 16-bit, non-interlaced)
# ---------------------------------------------------------------------------

_DEPTH_DTYPES = {8: np.uint8, 16: np.uint16}


def encode_image(img: GrayImage, depth: int = 16) -> bytes:
    """Encode to a single-channel non-interlaced PNG at the given bit depth.

    Samples quantize by round-half-away-from-zero: round(s * (2^depth - 1)).
    """
    if depth not in _DEPTH_DTYPES:
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    maxval = (1 << depth) - 1
    # Samples are non-negative, so half-away-from-zero == floor(x + 0.5).
    quant = np.floor(img.pixels * maxval + 0.5).astype(_DEPTH_DTYPES[depth])
    buf = io.BytesIO()
    Image.fromarray(quant).save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> GrayImage:
    """Decode a single-channel 8- or 16-bit PNG into normalized samples."""
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"not a decodable PNG stream: {exc}") from exc
    if im.format != "PNG":
        raise UnsupportedFormatError(f"expected PNG, got {im.format}")
    if im.mode == "L":
        maxval = 255
    elif im.mode in ("I;16", "I;16B", "I"):
        maxval = 65535
    else:
        raise UnsupportedFormatError(
            f"only single-channel 8/16-bit PNGs are supported, got mode {im.mode}"
        )
    arr = np.asarray(im, dtype=np.float64)
    if arr.ndim != 2:
        raise UnsupportedFormatError("multi-channel PNG input is not supported")
    return GrayImage(arr / maxval)


def quantized_levels(img: GrayImage, depth: int) -> np.ndarray:
    """Integer levels the codec would store for img at the given depth."""
    if depth not in _DEPTH_DTYPES:
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    maxval = (1 << depth) - 1
    return np.floor(img.pixels * maxval + 0.5).astype(np.int64)


def write_mask_png(mask: BinaryMask) -> bytes:
    """Binary masks are written 8-bit with values {0, 255}."""
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def read_mask_png(data: bytes) -> BinaryMask:
    img = decode_image(data)
    return BinaryMask(img.pixels > 0.5)


def write_labelmap_png(labels: LabelMap) -> bytes:
    """LabelMaps are written 16-bit with raw ids; > 65535 ids is an error."""
    if labels.count > 65535:
        raise ValueError(f"LabelMap count {labels.count} exceeds 16-bit PNG range")
    arr = labels.ids.astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def read_labelmap_png(data: bytes) -> LabelMap:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"not a decodable PNG stream: {exc}") from exc
    if im.mode not in ("I;16", "I;16B", "I", "L"):
        raise UnsupportedFormatError(f"unsupported LabelMap PNG mode {im.mode}")
    return LabelMap(np.asarray(im, dtype=np.int64))
