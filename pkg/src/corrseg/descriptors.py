"""Descriptor enrichment on patch grids.

Log binning augments each patch vector with direction-binned means of its
neighborhood at exponentially growing radii, then renormalizes. Multi-sample
aggregation averages repeated stochastic feature extractions (e.g. diffusion
features) elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from .core import FeatureGrid, ZERO_NORM_EPS

# Compass order: N, NE, E, SE, S, SW, W, NW (clockwise from up).
NUM_DIRECTIONS = 8

DEFAULT_DIFT_SAMPLES = 8


@dataclass(frozen=True)
class LogBinParams:
    """Neighborhood binning layout: ``levels`` rings of 8 compass sectors.

    Level l (1-based) collects cells at Chebyshev distance 2**(l-1). Output
    channel count is D * (1 + 8 * levels).
    """

    levels: int = 2
    directions: int = NUM_DIRECTIONS

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.directions != NUM_DIRECTIONS:
            raise ValueError("binning uses exactly 8 compass directions")

    def radius(self, level: int) -> int:
        return 2 ** (level - 1)

    def to_json(self) -> dict:
        return {"levels": self.levels, "directions": self.directions}

    @classmethod
    def from_json(cls, doc: dict) -> "LogBinParams":
        return cls(levels=int(doc.get("levels", 2)), directions=int(doc.get("directions", 8)))


@lru_cache(maxsize=None)
def _sector_offsets(radius: int) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
    """Ring cells at Chebyshev distance ``radius`` grouped by compass sector.

    A cell offset (dy, dx) belongs to the bearing nearest its angle measured
    clockwise from north. No integer offset falls on a 22.5-degree sector
    boundary, so the assignment is unambiguous and reflection-symmetric.
    """
    sectors: List[List[Tuple[int, int]]] = [[] for _ in range(NUM_DIRECTIONS)]
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if max(abs(dy), abs(dx)) != radius:
                continue
            angle = math.atan2(dx, -dy)
            k = int(round(angle / (math.pi / 4))) % NUM_DIRECTIONS
            sectors[k].append((dy, dx))
    return tuple(tuple(s) for s in sectors)


def _shifted_sum(data: np.ndarray, offsets: Sequence[Tuple[int, int]]) -> Tuple[np.ndarray, np.ndarray]:
    """Sum of in-bounds neighbors at the given offsets, with per-cell counts."""
    hp, wp, d = data.shape
    acc = np.zeros((hp, wp, d), dtype=np.float64)
    cnt = np.zeros((hp, wp, 1), dtype=np.float64)
    for dy, dx in offsets:
        dst_r = slice(max(0, -dy), hp - max(0, dy))
        dst_c = slice(max(0, -dx), wp - max(0, dx))
        src_r = slice(max(0, dy), hp + min(0, dy))
        src_c = slice(max(0, dx), wp + min(0, dx))
        if dst_r.start >= dst_r.stop or dst_c.start >= dst_c.stop:
            continue
        acc[dst_r, dst_c] += data[src_r, src_c]
        cnt[dst_r, dst_c] += 1.0
    return acc, cnt


def log_bin_enrich(grid: FeatureGrid, params: LogBinParams = LogBinParams()) -> FeatureGrid:
    """Concatenate each patch vector with its sector means and renormalize.

    Per cell: [center, level-1 sectors N..NW, level-2 sectors N..NW, ...].
    Out-of-bounds neighbors are dropped from the mean; a fully out-of-bounds
    sector contributes a zero block. The concatenated descriptor is
    L2-normalized per cell (zero stays zero).
    """
    data = grid.data.astype(np.float64, copy=False)
    blocks = [data]
    for level in range(1, params.levels + 1):
        for offsets in _sector_offsets(params.radius(level)):
            acc, cnt = _shifted_sum(data, offsets)
            blocks.append(acc / np.maximum(cnt, 1.0))
    out = np.concatenate(blocks, axis=-1)

    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    safe = np.where(norms < ZERO_NORM_EPS, 1.0, norms)
    out = np.where(norms < ZERO_NORM_EPS, 0.0, out / safe)
    return FeatureGrid(
        out,
        stride_y=grid.stride_y,
        stride_x=grid.stride_x,
        offset_y=grid.offset_y,
        offset_x=grid.offset_x,
        source_dims=grid.source_dims,
    )


def enriched_channels(d: int, params: LogBinParams) -> int:
    return d * (1 + NUM_DIRECTIONS * params.levels)


def aggregate_feature_samples(grids: Sequence[FeatureGrid]) -> FeatureGrid:
    """Elementwise mean of repeated feature extractions of one image."""
    if len(grids) == 0:
        raise ValueError("no feature samples to aggregate")
    first = grids[0]
    for g in grids[1:]:
        if g.geometry() != first.geometry():
            raise ValueError(f"sample geometry mismatch: {g.geometry()} vs {first.geometry()}")
    stack = np.stack([g.data.astype(np.float64, copy=False) for g in grids])
    return FeatureGrid(
        stack.mean(axis=0),
        stride_y=first.stride_y,
        stride_x=first.stride_x,
        offset_y=first.offset_y,
        offset_x=first.offset_x,
        source_dims=first.source_dims,
    )
