"""Core raster and feature types.

Coordinate convention everywhere: (row, col), origin top-left, 0-indexed.
All types are immutable after construction (arrays are marked read-only),
so values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

Point = Tuple[int, int]

ZERO_NORM_EPS = 1e-12


def _frozen_array(data, dtype=None) -> np.ndarray:
    """Own a C-contiguous copy and mark it read-only."""
    out = np.array(data, dtype=dtype, copy=True, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Image2D:
    """Grayscale raster with intensities normalized to [0, 1]."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        px = _frozen_array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be 2D with positive dims, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("non-finite pixel intensity")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class FeatureGrid:
    """Coarse patch-token feature map with pixel-space geometry.

    ``data`` is (Hp, Wp, D). Patch (i, j) is centered at pixel
    (offset_y + i * stride_y, offset_x + j * stride_x) of the source image,
    whose dims are recorded in ``source_dims``.
    """

    data: np.ndarray
    stride_y: int
    stride_x: int
    offset_y: float
    offset_x: float
    source_dims: Tuple[int, int]

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        arr = _frozen_array(arr, dtype=arr.dtype)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"feature grid must be (Hp, Wp, D) with positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite feature value")
        if int(self.stride_y) < 1 or int(self.stride_x) < 1:
            raise ValueError("stride must be >= 1")
        p, q = self.source_dims
        if p < 1 or q < 1:
            raise ValueError("source_dims must be positive")
        hp, wp, _ = arr.shape
        last_y = self.offset_y + (hp - 1) * self.stride_y
        last_x = self.offset_x + (wp - 1) * self.stride_x
        if self.offset_y < 0 or self.offset_x < 0 or last_y > p - 1 or last_x > q - 1:
            raise ValueError(
                f"patch centers [{self.offset_y}..{last_y}]x[{self.offset_x}..{last_x}] "
                f"exceed source dims {self.source_dims}"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "stride_y", int(self.stride_y))
        object.__setattr__(self, "stride_x", int(self.stride_x))
        object.__setattr__(self, "offset_y", float(self.offset_y))
        object.__setattr__(self, "offset_x", float(self.offset_x))
        object.__setattr__(self, "source_dims", (int(p), int(q)))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def geometry(self) -> tuple:
        """Everything but the values; used for compatibility checks."""
        return (
            self.data.shape,
            self.stride_y,
            self.stride_x,
            self.offset_y,
            self.offset_x,
            self.source_dims,
        )


@dataclass(frozen=True)
class PixelFeatureMap:
    """Per-pixel descriptor field, (P, Q, C)."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        arr = _frozen_array(arr, dtype=arr.dtype)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"pixel feature map must be (P, Q, C), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite feature value")
        if self.normalized:
            norms = np.linalg.norm(arr, axis=-1)
            ok = (norms < ZERO_NORM_EPS) | (np.abs(norms - 1.0) <= 1e-6)
            if not bool(np.all(ok)):
                raise ValueError("normalized flag set but per-pixel norms are not in {0} u [1 +/- 1e-6]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.data.shape[:2]


def _as_points(points) -> Tuple[Point, ...]:
    out = []
    for p in points:
        r, c = p
        if int(r) != r or int(c) != c:
            raise ValueError(f"prompt coordinates must be integers, got {p!r}")
        out.append((int(r), int(c)))
    return tuple(out)


@dataclass(frozen=True)
class PromptSet:
    """Positive and negative point prompts in pixel coordinates.

    ``labels``, when present, names the positive points (landmarks) and must
    match them in length and order.
    """

    positive: Tuple[Point, ...] = ()
    negative: Tuple[Point, ...] = ()
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        pos = _as_points(self.positive)
        neg = _as_points(self.negative)
        if len(set(pos)) != len(pos) or len(set(neg)) != len(neg):
            raise ValueError("duplicate prompt point within a polarity")
        labels = self.labels
        if labels is not None:
            labels = tuple(str(s) for s in labels)
            if len(labels) != len(pos):
                raise ValueError(f"{len(labels)} labels for {len(pos)} positive points")
        object.__setattr__(self, "positive", pos)
        object.__setattr__(self, "negative", neg)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.positive)

    @property
    def m(self) -> int:
        return len(self.negative)

    def validate_bounds(self, dims: Tuple[int, int]) -> None:
        p, q = dims
        for r, c in self.positive + self.negative:
            if not (0 <= r < p and 0 <= c < q):
                raise ValueError(f"prompt ({r}, {c}) outside image bounds {p}x{q}")


@dataclass(frozen=True)
class Mask:
    """Binary segmentation raster."""

    bits: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.bits, dtype=bool)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ValueError(f"mask must be 2D with positive dims, got {arr.shape}")
        object.__setattr__(self, "bits", arr)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.bits.shape

    @property
    def area(self) -> int:
        return int(self.bits.sum())


def upsample_bilinear(grid: FeatureGrid) -> PixelFeatureMap:
    """Interpolate a patch grid to a per-pixel feature map.

    Pixel (r, c) maps to fractional grid coordinates
    ((r - offset_y) / stride_y, (c - offset_x) / stride_x), clamped to the
    grid, then interpolated bilinearly. Patch centers reproduce the patch
    vector exactly; pixels beyond the border centers clamp rather than
    extrapolate.
    """
    p, q = grid.source_dims
    hp, wp, _ = grid.data.shape
    data = grid.data.astype(np.float64, copy=False)

    gr = np.clip((np.arange(p) - grid.offset_y) / grid.stride_y, 0.0, hp - 1.0)
    gc = np.clip((np.arange(q) - grid.offset_x) / grid.stride_x, 0.0, wp - 1.0)

    r0 = np.floor(gr).astype(np.intp)
    c0 = np.floor(gc).astype(np.intp)
    r1 = np.minimum(r0 + 1, hp - 1)
    c1 = np.minimum(c0 + 1, wp - 1)
    wr = (gr - r0)[:, None, None]
    wc = (gc - c0)[None, :, None]

    top = data[np.ix_(r0, c0)] * (1.0 - wc) + data[np.ix_(r0, c1)] * wc
    bot = data[np.ix_(r1, c0)] * (1.0 - wc) + data[np.ix_(r1, c1)] * wc
    out = top * (1.0 - wr) + bot * wr
    return PixelFeatureMap(out, normalized=False)


def l2_normalize(feature_map: PixelFeatureMap) -> PixelFeatureMap:
    """Scale each pixel vector to unit norm; near-zero vectors become zero."""
    if feature_map.normalized:
        return feature_map
    data = feature_map.data.astype(np.float64, copy=False)
    norms = np.linalg.norm(data, axis=-1, keepdims=True)
    safe = np.where(norms < ZERO_NORM_EPS, 1.0, norms)
    out = np.where(norms < ZERO_NORM_EPS, 0.0, data / safe)
    return PixelFeatureMap(out, normalized=True)
