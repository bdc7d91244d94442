"""Shared feature-preparation steps used by the batch runner and the service."""

from __future__ import annotations

from typing import Optional

from .core import FeatureGrid, PixelFeatureMap, l2_normalize, upsample_bilinear
from .descriptors import LogBinParams, log_bin_enrich


def pixel_feature_map(grid: FeatureGrid, enrichment: Optional[LogBinParams] = None) -> PixelFeatureMap:
    """Optional log-bin enrichment, then bilinear up-sampling and unit norms."""
    if enrichment is not None:
        grid = log_bin_enrich(grid, enrichment)
    return l2_normalize(upsample_bilinear(grid))
