"""Feature acquisition: the encoder registry, a file-backed provider reading
precomputed DFG1 grids, and an HTTP client for an external inference host.

Model inference never runs inside the engine; providers only hand back
FeatureGrid values and are deterministic per (image, model)."""

from __future__ import annotations

import base64
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Optional, Tuple

from .core import FeatureGrid, Image2D
from .descriptors import DEFAULT_DIFT_SAMPLES, aggregate_feature_samples
from .fileio import grid_from_bytes, image_png_bytes, load_feature_grid

TOKEN = "token"
ENCODER_OUTPUT = "encoder-output"
DIFFUSION_INTERMEDIATE = "diffusion-intermediate"


@dataclass(frozen=True)
class ModelSpec:
    """Registry metadata for one pretrained encoder configuration."""

    id: str
    patch_size: int
    embedding_layer: Optional[int]
    embedding_kind: str
    embed_dim: Optional[int] = None
    notes: str = ""


_DINO_NOTE = "transformer token embeddings at the listed layer"

_REGISTRY: Dict[str, ModelSpec] = {
    spec.id: spec
    for spec in [
        ModelSpec("d1s8", 8, 11, TOKEN, 384, _DINO_NOTE),
        ModelSpec("d1s16", 16, 11, TOKEN, 384, _DINO_NOTE),
        ModelSpec("d1b8", 8, 11, TOKEN, 768, _DINO_NOTE),
        ModelSpec("d1b16", 16, 11, TOKEN, 768, _DINO_NOTE),
        ModelSpec("d2s14", 14, 11, TOKEN, 384, _DINO_NOTE),
        ModelSpec("d2b14", 14, 11, TOKEN, 768, _DINO_NOTE),
        ModelSpec("d2l14", 14, 23, TOKEN, 1024, _DINO_NOTE),
        ModelSpec("d2g14", 14, 39, TOKEN, 1536, _DINO_NOTE),
        ModelSpec("sam", 16, None, ENCODER_OUTPUT, 256, "ViT-H image-encoder output"),
        ModelSpec(
            "sd", 16, 1, DIFFUSION_INTERMEDIATE, 1280,
            "denoising U-Net intermediate features, averaged over repeats",
        ),
        ModelSpec(
            "clip", 16, 11, TOKEN, 768,
            "ViT-B visual-encoder patch tokens; visualization-only, excluded "
            "from quantitative runs",
        ),
    ]
}

MODEL_REGISTRY = MappingProxyType(_REGISTRY)


def registry_lookup(model_id: str) -> ModelSpec:
    try:
        return MODEL_REGISTRY[model_id]
    except KeyError:
        raise KeyError(f"unknown model id {model_id!r}") from None


class FeatureProvider(ABC):
    """Source of patch features for (image, model) pairs.

    Implementations must be deterministic: repeated calls with the same
    arguments return identical grids, and concurrent reads are safe.
    """

    @abstractmethod
    def features_for(self, image_id: str, model: ModelSpec) -> FeatureGrid:
        ...


class FileFeatureProvider(FeatureProvider):
    """Reads precomputed grids from ``root/<model_id>/<image_id>.dfg1``.

    Multi-sample diffusion features may instead be stored as
    ``<image_id>.s<k>.dfg1``; those are aggregated by elementwise mean.
    Loaded grids are cached for the provider lifetime.
    """

    def __init__(self, root):
        self._root = Path(root)
        self._cache: Dict[Tuple[str, str], FeatureGrid] = {}
        self._lock = threading.Lock()

    def features_for(self, image_id: str, model: ModelSpec) -> FeatureGrid:
        key = (model.id, image_id)
        with self._lock:
            if key in self._cache:
                return self._cache[key]

        model_dir = self._root / model.id
        if not model_dir.is_dir():
            raise FileNotFoundError(f"no features for model {model.id}")
        base = model_dir / f"{image_id}.dfg1"
        if base.is_file():
            grid = load_feature_grid(base)
        elif model.embedding_kind == DIFFUSION_INTERMEDIATE:
            samples = sorted(model_dir.glob(f"{image_id}.s*.dfg1"))
            if not samples:
                raise FileNotFoundError(f"no features for image {image_id!r} under model {model.id}")
            grid = aggregate_feature_samples([load_feature_grid(p) for p in samples])
        else:
            raise FileNotFoundError(f"no features for image {image_id!r} under model {model.id}")

        with self._lock:
            return self._cache.setdefault(key, grid)


class ExternalFeatureProvider(FeatureProvider):
    """Client for a remote inference host speaking the /features protocol.

    Sends {"model", "image_png_base64", "stride", "layer", "samples"} and
    parses the binary DFG1 response. The stride parameter densifies the patch
    grid (overlapping patches); it defaults to half the model's patch size.
    Responses are validated against the model's channel count and the
    requested stride, then cached insert-once. In-flight requests are capped.
    """

    def __init__(
        self,
        endpoint: str,
        image_root=None,
        stride: Optional[int] = None,
        samples: Optional[int] = None,
        timeout: float = 60.0,
        max_inflight: int = 4,
    ):
        self._endpoint = endpoint.rstrip("/")
        self._image_root = Path(image_root) if image_root is not None else None
        self._stride = stride
        self._samples = samples
        self._timeout = timeout
        self._gate = threading.Semaphore(max_inflight)
        self._cache: Dict[Tuple[str, str], FeatureGrid] = {}
        self._lock = threading.Lock()

    def _stride_for(self, model: ModelSpec) -> int:
        if self._stride is not None:
            return self._stride
        return max(1, model.patch_size // 2)

    def _samples_for(self, model: ModelSpec) -> int:
        if self._samples is not None:
            return self._samples
        return DEFAULT_DIFT_SAMPLES if model.embedding_kind == DIFFUSION_INTERMEDIATE else 1

    def features_for(self, image_id: str, model: ModelSpec) -> FeatureGrid:
        if self._image_root is None:
            raise ValueError("external provider has no image root configured")
        path = self._image_root / f"{image_id}.png"
        if not path.is_file():
            raise FileNotFoundError(f"no such image: {path}")
        return self._fetch(path.read_bytes(), model, (model.id, image_id))

    def features_for_image(
        self, image: Image2D, model: ModelSpec, cache_key: Optional[str] = None
    ) -> FeatureGrid:
        """Request features for an in-memory image (e.g. a flipped template)."""
        key = (model.id, cache_key) if cache_key is not None else None
        return self._fetch(image_png_bytes(image), model, key)

    def _fetch(self, png: bytes, model: ModelSpec, key) -> FeatureGrid:
        if key is not None:
            with self._lock:
                if key in self._cache:
                    return self._cache[key]

        import requests

        stride = self._stride_for(model)
        payload = {
            "model": model.id,
            "image_png_base64": base64.b64encode(png).decode("ascii"),
            "stride": stride,
            "layer": model.embedding_layer,
            "samples": self._samples_for(model),
        }
        try:
            with self._gate:
                resp = requests.post(
                    f"{self._endpoint}/features", json=payload, timeout=self._timeout
                )
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise RuntimeError(f"inference endpoint unreachable or failed: {exc}") from exc

        try:
            grid = grid_from_bytes(resp.content)
        except ValueError as exc:
            raise ValueError(f"malformed feature response: {exc}") from exc
        if model.embed_dim is not None and grid.channels != model.embed_dim:
            raise ValueError(
                f"channel mismatch: model {model.id} expects D={model.embed_dim}, "
                f"endpoint returned D={grid.channels}"
            )
        if grid.stride_y != stride or grid.stride_x != stride:
            raise ValueError(
                f"geometry mismatch: requested stride {stride}, endpoint returned "
                f"({grid.stride_y}, {grid.stride_x})"
            )

        if key is None:
            return grid
        with self._lock:
            return self._cache.setdefault(key, grid)
