"""Joint k-means over the pixels of several feature maps.

Co-clustering assigns one shared centroid set across all images, so the same
label index means the same feature cluster everywhere; overlays rendered with
a shared palette make cross-image semantic consistency visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import Image2D, PixelFeatureMap, ZERO_NORM_EPS

MAX_ITERATIONS = 100
RELATIVE_INERTIA_TOL = 1e-6

_ASSIGN_CHUNK = 16384


@dataclass(frozen=True)
class CoClusterResult:
    k: int
    centroids: np.ndarray  # (k, C)
    label_maps: Tuple[np.ndarray, ...]  # per-image (P, Q) int labels
    inertia: float
    iterations: int
    inertia_history: Tuple[float, ...]  # one entry per assignment pass


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per point (squared Euclidean, ties to smallest index)."""
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    c_sq = np.einsum("kc,kc->k", centroids, centroids)
    for start in range(0, n, _ASSIGN_CHUNK):
        chunk = points[start:start + _ASSIGN_CHUNK]
        d2 = c_sq[None, :] - 2.0 * (chunk @ centroids.T)
        labels[start:start + _ASSIGN_CHUNK] = np.argmin(d2, axis=1)
    return labels


def _inertia(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(np.sum((points - centroids[labels]) ** 2))


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _repair_empty(
    points: np.ndarray, centroids: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Re-seed each empty cluster at the farthest point of the largest one."""
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        largest = int(np.argmax(counts))
        members = np.flatnonzero(labels == largest)
        dists = np.sum((points[members] - centroids[largest]) ** 2, axis=1)
        moved = members[int(np.argmax(dists))]
        centroids[j] = points[moved]
        labels[moved] = j
        counts[largest] -= 1
        counts[j] += 1
    return centroids


def co_cluster(
    maps: Sequence[PixelFeatureMap],
    k: int,
    seed: int,
    normalize: bool = False,
) -> CoClusterResult:
    """Pool pixels of all maps and run seeded k-means (k-means++, Lloyd).

    Iterates until the relative inertia change drops below 1e-6 or 100
    iterations; deterministic for fixed (inputs, seed). ``normalize``
    L2-normalizes pixel vectors first, mirroring the cosine geometry used by
    the correspondence kernel.
    """
    if len(maps) == 0:
        raise ValueError("no feature maps given")
    channels = maps[0].channels
    for m in maps[1:]:
        if m.channels != channels:
            raise ValueError(f"channel mismatch: {m.channels} vs {channels}")

    pools = [m.data.reshape(-1, channels).astype(np.float64) for m in maps]
    points = np.concatenate(pools, axis=0)
    if normalize:
        norms = np.linalg.norm(points, axis=1, keepdims=True)
        points = np.where(norms < ZERO_NORM_EPS, 0.0, points / np.where(norms < ZERO_NORM_EPS, 1.0, norms))
    n = points.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k={k} must be in [1, {n}] for {n} pooled pixels")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)

    labels = _assign(points, centroids)
    history = [_inertia(points, centroids, labels)]
    iterations = 0
    for _ in range(MAX_ITERATIONS):
        sums = np.zeros((k, channels), dtype=np.float64)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        nonzero = counts > 0
        centroids[nonzero] = sums[nonzero] / counts[nonzero, None]
        centroids = _repair_empty(points, centroids, labels)

        labels = _assign(points, centroids)
        inertia = _inertia(points, centroids, labels)
        history.append(inertia)
        iterations += 1
        prev = history[-2]
        if abs(prev - inertia) < RELATIVE_INERTIA_TOL * max(prev, ZERO_NORM_EPS):
            break

    label_maps = []
    offset = 0
    for m in maps:
        size = m.height * m.width
        label_maps.append(labels[offset:offset + size].reshape(m.height, m.width).copy())
        offset += size
    for lm in label_maps:
        lm.flags.writeable = False
    centroids.flags.writeable = False

    return CoClusterResult(
        k=k,
        centroids=centroids,
        label_maps=tuple(label_maps),
        inertia=history[-1],
        iterations=iterations,
        inertia_history=tuple(history),
    )


def label_palette(k: int, seed: int, min_separation: int = 32) -> np.ndarray:
    """Deterministic (k, 3) uint8 palette with pairwise Chebyshev channel
    distance >= min_separation (best effort once the cube fills up)."""
    rng = np.random.default_rng(seed)
    colors: List[np.ndarray] = []
    while len(colors) < k:
        best, best_dist = None, -1
        for _ in range(2048):
            cand = rng.integers(0, 256, size=3)
            dist = min(
                (int(np.max(np.abs(cand - c))) for c in colors),
                default=min_separation,
            )
            if dist >= min_separation:
                best = cand
                break
            if dist > best_dist:
                best, best_dist = cand, dist
        colors.append(np.asarray(best))
    return np.stack(colors).astype(np.uint8)


def render_label_overlay(
    image: Image2D,
    labels: np.ndarray,
    palette_seed: int,
    alpha: float = 0.5,
) -> np.ndarray:
    """Blend a palette-colored label layer over the grayscale image.

    The palette depends only on (label count, seed), so the same label index
    gets the same color in every image of one clustering result. alpha=1
    returns the pure label colors.
    """
    labels = np.asarray(labels)
    if labels.shape != image.dims:
        raise ValueError(f"label dims {labels.shape} != image dims {image.dims}")
    if labels.min() < 0:
        raise ValueError("negative label index")
    palette = label_palette(int(labels.max()) + 1, palette_seed)
    gray = image.pixels[..., None] * 255.0
    tint = palette[labels].astype(np.float64)
    out = np.round((1.0 - alpha) * gray + alpha * tint)
    return np.clip(out, 0, 255).astype(np.uint8)
