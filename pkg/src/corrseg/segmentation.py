"""Chaining propagated prompts into a point-promptable mask predictor, plus
the similarity-percentile mask generator and mask cleanup."""

from __future__ import annotations

import base64
import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import Image2D, Mask, Point
from .correspondence import Heatmap, Match, POSITIVE


class MaskPredictor(ABC):
    """Point-promptable mask predictor contract.

    ``predict`` must return at least one (mask, score) candidate when given
    at least one positive point; every mask must match the image dims and
    every score must be finite.
    """

    #: whether concurrent predict() calls are safe
    thread_safe: bool = True

    @abstractmethod
    def predict(
        self,
        image: Image2D,
        positive: Sequence[Point],
        negative: Sequence[Point],
    ) -> List[Tuple[Mask, float]]:
        ...


class OraclePredictor(MaskPredictor):
    """Deterministic test double backed by a hidden integer label image.

    Returns the union of label regions that contain at least one positive
    point and no negative points; the score is the fraction of positive
    points inside the returned mask. Makes end-to-end behavior checkable
    without any neural weights.
    """

    thread_safe = True

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise ValueError("label image must be 2D")
        self._labels = labels.astype(np.int64, copy=True)
        self._labels.flags.writeable = False

    def predict(self, image, positive, negative):
        if self._labels.shape != image.dims:
            raise ValueError(f"label image dims {self._labels.shape} != image dims {image.dims}")
        pos_regions = {int(self._labels[r, c]) for r, c in positive}
        neg_regions = {int(self._labels[r, c]) for r, c in negative}
        keep = pos_regions - neg_regions
        bits = np.isin(self._labels, sorted(keep))
        mask = Mask(bits)
        inside = sum(1 for r, c in positive if bits[r, c])
        score = inside / len(positive) if positive else 0.0
        return [(mask, score)]


class ExternalMaskPredictor(MaskPredictor):
    """Client for an out-of-process mask predictor (e.g. a SAM host).

    Speaks POST {endpoint}/predict_mask with a base64 PNG and point lists;
    expects {"candidates": [{"mask_png_base64", "score"}, ...]}. Requests are
    serialized: remote decoders are not assumed reentrant.
    """

    thread_safe = True  # calls are serialized internally

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self._endpoint = endpoint.rstrip("/")
        self._timeout = timeout
        self._lock = threading.Lock()

    def predict(self, image, positive, negative):
        import requests

        from .fileio import image_png_bytes, mask_from_png_bytes

        payload = {
            "image_png_base64": base64.b64encode(image_png_bytes(image)).decode("ascii"),
            "positive": [[r, c] for r, c in positive],
            "negative": [[r, c] for r, c in negative],
        }
        with self._lock:
            resp = requests.post(
                f"{self._endpoint}/predict_mask", json=payload, timeout=self._timeout
            )
        resp.raise_for_status()
        doc = resp.json()
        candidates = []
        for cand in doc.get("candidates", []):
            mask = mask_from_png_bytes(base64.b64decode(cand["mask_png_base64"]))
            candidates.append((mask, float(cand["score"])))
        if not candidates:
            raise ValueError("predictor returned no candidates")
        return candidates


@dataclass(frozen=True)
class SegmentationOutcome:
    mask: Mask
    predictor_score: float
    prompts_used: Tuple[Match, ...]
    candidates_considered: int

    def to_json(self) -> dict:
        return {
            "score": self.predictor_score,
            "prompts": [m.to_json() for m in self.prompts_used],
            "candidates": self.candidates_considered,
        }


def segment_with_prompts(
    target: Image2D,
    matches: Sequence[Match],
    predictor: MaskPredictor,
) -> SegmentationOutcome:
    """Feed propagated prompts to the predictor and keep the best candidate.

    Candidates are ranked by predictor score; ties keep the first returned.
    """
    positive = [m.target for m in matches if m.polarity == POSITIVE]
    negative = [m.target for m in matches if m.polarity != POSITIVE]
    if not positive:
        raise ValueError("no positive prompts")
    p, q = target.dims
    for r, c in positive + negative:
        if not (0 <= r < p and 0 <= c < q):
            raise ValueError(f"prompt ({r}, {c}) outside target bounds {target.dims}")

    try:
        candidates = predictor.predict(target, positive, negative)
    except Exception as exc:
        raise RuntimeError(f"mask predictor failed: {exc}") from exc
    if not candidates:
        raise RuntimeError("mask predictor returned no candidates")
    for mask, score in candidates:
        if mask.dims != target.dims:
            raise RuntimeError(f"predictor mask dims {mask.dims} != target dims {target.dims}")
        if not math.isfinite(score):
            raise RuntimeError("predictor returned non-finite score")

    best = max(range(len(candidates)), key=lambda i: (candidates[i][1], -i))
    mask, score = candidates[best]
    return SegmentationOutcome(
        mask=mask,
        predictor_score=score,
        prompts_used=tuple(matches),
        candidates_considered=len(candidates),
    )


def similarity_threshold_mask(heatmaps: Sequence[Heatmap], percentile: float = 0.80) -> Mask:
    """Threshold the per-pixel max similarity at its nearest-rank percentile.

    With N pixels, the threshold is the ceil(percentile * N)-th order
    statistic (1-indexed) and the mask keeps every pixel at or above it, so
    the threshold pixel itself is always selected.
    """
    if len(heatmaps) == 0:
        raise ValueError("no heatmaps given")
    if not (0.0 < percentile < 1.0):
        raise ValueError(f"percentile must be in (0, 1), got {percentile}")
    dims = heatmaps[0].dims
    for hm in heatmaps[1:]:
        if hm.dims != dims:
            raise ValueError(f"heatmap dims mismatch: {hm.dims} vs {dims}")

    best = np.maximum.reduce([hm.values for hm in heatmaps])
    flat = np.sort(best.reshape(-1))
    rank = math.ceil(percentile * flat.size)  # 1-indexed nearest rank
    threshold = flat[rank - 1]
    return Mask(best >= threshold)


def largest_component(mask: Mask) -> Mask:
    """Keep only the largest 4-connected foreground component."""
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labeled, count = ndimage.label(mask.bits, structure=structure)
    if count == 0:
        return mask
    sizes = np.bincount(labeled.reshape(-1))
    sizes[0] = 0  # background
    keep = int(np.argmax(sizes))  # first largest on ties
    return Mask(labeled == keep)
