"""One-shot localization and segmentation via dense-feature prompt propagation.

A single annotated template image carries positive/negative point prompts;
the engine transfers them to target images through cosine-similarity
correspondence over per-pixel descriptors and can chain the transferred
points into any point-promptable mask predictor.
"""

from .backends import (
    ExternalFeatureProvider,
    FeatureProvider,
    FileFeatureProvider,
    MODEL_REGISTRY,
    ModelSpec,
    registry_lookup,
)
from .clustering import CoClusterResult, co_cluster, label_palette, render_label_overlay
from .core import (
    FeatureGrid,
    Image2D,
    Mask,
    PixelFeatureMap,
    PromptSet,
    l2_normalize,
    upsample_bilinear,
)
from .correspondence import (
    Heatmap,
    Match,
    correspond,
    flip,
    flip_prompts,
    heatmap_to_codes,
    similarity_heatmap,
)
from .descriptors import LogBinParams, aggregate_feature_samples, log_bin_enrich
from .metrics import (
    LocalizationError,
    PromptAccuracy,
    TargetMetrics,
    aggregate_report,
    dice,
    localization_error,
    multiple_correlation,
    prompt_accuracy,
    report_to_csv,
)
from .pipeline import pixel_feature_map
from .segmentation import (
    ExternalMaskPredictor,
    MaskPredictor,
    OraclePredictor,
    SegmentationOutcome,
    largest_component,
    segment_with_prompts,
    similarity_threshold_mask,
)

__version__ = "0.1.0"

__all__ = [
    "CoClusterResult",
    "ExternalFeatureProvider",
    "ExternalMaskPredictor",
    "FeatureGrid",
    "FeatureProvider",
    "FileFeatureProvider",
    "Heatmap",
    "Image2D",
    "LocalizationError",
    "LogBinParams",
    "MODEL_REGISTRY",
    "Mask",
    "MaskPredictor",
    "Match",
    "ModelSpec",
    "OraclePredictor",
    "PixelFeatureMap",
    "PromptAccuracy",
    "PromptSet",
    "SegmentationOutcome",
    "TargetMetrics",
    "aggregate_feature_samples",
    "aggregate_report",
    "co_cluster",
    "correspond",
    "dice",
    "flip",
    "flip_prompts",
    "heatmap_to_codes",
    "l2_normalize",
    "label_palette",
    "largest_component",
    "localization_error",
    "log_bin_enrich",
    "multiple_correlation",
    "pixel_feature_map",
    "prompt_accuracy",
    "registry_lookup",
    "render_label_overlay",
    "report_to_csv",
    "segment_with_prompts",
    "similarity_heatmap",
    "similarity_threshold_mask",
    "upsample_bilinear",
]
