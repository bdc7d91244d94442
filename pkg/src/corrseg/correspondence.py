"""Prompt propagation by dense cosine-similarity search.

Each template prompt carries a feature vector; its match on the target is the
pixel maximizing cosine similarity over the whole target grid. The search is
exhaustive and deterministic: ties break to the smallest row-major linear
index, and zero-norm vectors score 0 rather than NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .core import Image2D, Mask, PixelFeatureMap, Point, PromptSet, l2_normalize

POSITIVE = "positive"
NEGATIVE = "negative"

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass(frozen=True)
class Match:
    """One propagated prompt: template point -> best target point."""

    source: Point
    target: Point
    similarity: float
    polarity: str
    label: Optional[str] = None

    def to_json(self) -> dict:
        doc = {
            "source": list(self.source),
            "target": list(self.target),
            "similarity": self.similarity,
            "polarity": self.polarity,
        }
        if self.label is not None:
            doc["label"] = self.label
        return doc


@dataclass(frozen=True)
class Heatmap:
    """Dense similarity field of one source prompt over a target image."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ValueError(f"heatmap must be 2D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite similarity value")
        if arr.min() < -1.0 or arr.max() > 1.0:
            raise ValueError("similarities must lie in [-1, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dims(self):
        return self.values.shape

    def argmax_point(self) -> Point:
        """Location of the maximum, first in row-major order on ties."""
        idx = int(np.argmax(self.values))
        r, c = divmod(idx, self.values.shape[1])
        return (r, c)


def _check_channels(template: PixelFeatureMap, target: PixelFeatureMap) -> None:
    if template.channels != target.channels:
        raise ValueError(
            f"channel mismatch: template C={template.channels}, target C={target.channels}"
        )


def _scores_for_vector(vec: np.ndarray, target_flat: np.ndarray) -> np.ndarray:
    # One matrix-vector pass per prompt keeps correspond and heatmap results
    # bitwise identical, which the tie-break rule depends on.
    return target_flat @ vec


def correspond(
    template_feats: PixelFeatureMap,
    prompts: PromptSet,
    target_feats: PixelFeatureMap,
) -> List[Match]:
    """Transfer every prompt (both polarities) to its argmax target pixel."""
    _check_channels(template_feats, target_feats)
    prompts.validate_bounds(template_feats.dims)

    if prompts.n + prompts.m == 0:
        return []

    tmpl = l2_normalize(template_feats)
    tgt = l2_normalize(target_feats)
    q = tgt.width
    target_flat = tgt.data.reshape(-1, tgt.channels)

    labels = prompts.labels or (None,) * prompts.n
    tagged = [(pt, POSITIVE, lab) for pt, lab in zip(prompts.positive, labels)]
    tagged += [(pt, NEGATIVE, None) for pt in prompts.negative]

    matches = []
    for (r, c), polarity, label in tagged:
        scores = _scores_for_vector(tmpl.data[r, c], target_flat)
        idx = int(np.argmax(scores))  # first max = smallest row-major index
        sim = float(np.clip(scores[idx], -1.0, 1.0))
        matches.append(Match((r, c), (idx // q, idx % q), sim, polarity, label))
    return matches


def similarity_heatmap(
    template_feats: PixelFeatureMap,
    point: Point,
    target_feats: PixelFeatureMap,
) -> Heatmap:
    """Cosine similarity of one template pixel against every target pixel."""
    _check_channels(template_feats, target_feats)
    r, c = point
    if not (0 <= r < template_feats.height and 0 <= c < template_feats.width):
        raise ValueError(f"point ({r}, {c}) outside template bounds {template_feats.dims}")

    tmpl = l2_normalize(template_feats)
    tgt = l2_normalize(target_feats)
    scores = _scores_for_vector(tmpl.data[r, c], tgt.data.reshape(-1, tgt.channels))
    values = np.clip(scores, -1.0, 1.0).reshape(tgt.dims)
    return Heatmap(values)


def heatmap_to_codes(heatmap: Heatmap) -> np.ndarray:
    """Affine map [-1, 1] -> [0, 255] for PNG export: v -> round((v+1)*127.5)."""
    return np.round((heatmap.values + 1.0) * 127.5).astype(np.uint8)


_AXES = (HORIZONTAL, VERTICAL)

Flippable = Union[Image2D, PixelFeatureMap, Mask, Heatmap]


def flip(obj: Flippable, axis: str) -> Flippable:
    """Mirror a raster: horizontal maps (r,c)->(r, Q-1-c), vertical (r,c)->(P-1-r, c)."""
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")
    np_axis = 1 if axis == HORIZONTAL else 0
    if isinstance(obj, Image2D):
        return Image2D(np.flip(obj.pixels, axis=np_axis), id=obj.id)
    if isinstance(obj, PixelFeatureMap):
        return PixelFeatureMap(np.flip(obj.data, axis=np_axis), normalized=obj.normalized)
    if isinstance(obj, Mask):
        return Mask(np.flip(obj.bits, axis=np_axis))
    if isinstance(obj, Heatmap):
        return Heatmap(np.flip(obj.values, axis=np_axis))
    raise TypeError(f"cannot flip {type(obj).__name__}")


def flip_point(point: Point, dims, axis: str) -> Point:
    p, q = dims
    r, c = point
    if axis == HORIZONTAL:
        return (r, q - 1 - c)
    if axis == VERTICAL:
        return (p - 1 - r, c)
    raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")


def flip_prompts(prompts: PromptSet, dims, axis: str) -> PromptSet:
    return PromptSet(
        positive=[flip_point(pt, dims, axis) for pt in prompts.positive],
        negative=[flip_point(pt, dims, axis) for pt in prompts.negative],
        labels=prompts.labels,
    )
