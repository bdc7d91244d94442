"""Synthetic end-to-end fixtures.

Images are built from integer region labels; per-pixel features are one-hot
region signatures stored as stride-1 grids, so correspondence is exact: a
template prompt in region v lands on the first row-major pixel of region v in
the target. That makes Dice and prompt-accuracy outcomes fully predictable
without any pretrained model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .core import FeatureGrid, Image2D, Mask, PromptSet
from .fileio import save_feature_grid, save_gray_png, save_image, save_mask, save_prompts

DEFAULT_MODEL_ID = "d2s14"


@dataclass(frozen=True)
class FixtureInfo:
    root: Path
    manifest_path: Path
    kind: str
    template_id: str
    target_ids: Tuple[str, ...]
    roi_region: int
    dims: Tuple[int, int]
    model_id: str


def _band_labels(dims, order) -> np.ndarray:
    """Vertical bands across the width, region ids given by ``order``."""
    p, q = dims
    n = len(order)
    labels = np.zeros((p, q), dtype=np.int64)
    edges = np.linspace(0, q, n + 1).astype(int)
    for band, region in enumerate(order):
        labels[:, edges[band]:edges[band + 1]] = region
    return labels


def _one_hot_grid(labels: np.ndarray, n_regions: int) -> FeatureGrid:
    p, q = labels.shape
    data = np.zeros((p, q, n_regions), dtype=np.float32)
    for region in range(n_regions):
        data[..., region] = labels == region
    return FeatureGrid(data, 1, 1, 0.0, 0.0, (p, q))


def _labels_image(labels: np.ndarray, n_regions: int) -> Image2D:
    return Image2D(labels / max(1, n_regions - 1))


def _region_points(labels, region, count, rng) -> List[Tuple[int, int]]:
    rows, cols = np.nonzero(labels == region)
    picks = rng.choice(len(rows), size=count, replace=False)
    return [(int(rows[i]), int(cols[i])) for i in picks]


def make_segmentation_fixture(
    root,
    dims: Tuple[int, int] = (24, 24),
    n_regions: int = 4,
    n_targets: int = 2,
    model_id: str = DEFAULT_MODEL_ID,
    seed: int = 0,
) -> FixtureInfo:
    """Region-band segmentation task with exact expected outcomes.

    Layout under ``root``: images/, features/<model>/, labels/, gt/,
    prompts.json, manifest.json, fixture.json.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    roi = 1
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "features" / model_id).mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(exist_ok=True)
    (root / "gt").mkdir(exist_ok=True)

    template_labels = _band_labels(dims, list(range(n_regions)))
    save_image(_labels_image(template_labels, n_regions), root / "images" / "template.png")
    save_feature_grid(
        _one_hot_grid(template_labels, n_regions),
        root / "features" / model_id / "template.dfg1",
    )
    save_gray_png(template_labels.astype(np.uint8), root / "labels" / "template.png")

    positives = _region_points(template_labels, roi, 2, rng)
    negative_regions = [r for r in range(n_regions) if r != roi]
    negatives = []
    for region in negative_regions[:2]:
        negatives += _region_points(template_labels, region, 1, rng)
    save_prompts("template", PromptSet(positive=positives, negative=negatives), root / "prompts.json")

    target_ids = []
    for t in range(n_targets):
        order = list(rng.permutation(n_regions))
        labels = _band_labels(dims, [int(x) for x in order])
        tid = f"target_{t:02d}"
        target_ids.append(tid)
        save_image(_labels_image(labels, n_regions), root / "images" / f"{tid}.png")
        save_feature_grid(_one_hot_grid(labels, n_regions), root / "features" / model_id / f"{tid}.dfg1")
        save_gray_png(labels.astype(np.uint8), root / "labels" / f"{tid}.png")
        save_mask(Mask(labels == roi), root / "gt" / f"{tid}.png")

    manifest = {
        "task_id": f"bands-seg-{seed}",
        "kind": "segmentation",
        "template": {"image": "images/template.png", "prompts": "prompts.json"},
        "targets": [f"images/{tid}.png" for tid in target_ids],
        "ground_truth": [f"gt/{tid}.png" for tid in target_ids],
        "models": [model_id],
        "enrichment": None,
        "features": {"kind": "file", "root": "features"},
        "predictor": {"kind": "oracle", "labels": [f"labels/{tid}.png" for tid in target_ids]},
        "output_dir": "out",
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    info = FixtureInfo(
        root=root,
        manifest_path=manifest_path,
        kind="segmentation",
        template_id="template",
        target_ids=tuple(target_ids),
        roi_region=roi,
        dims=dims,
        model_id=model_id,
    )
    _write_fixture_info(info)
    return info


def make_localization_fixture(
    root,
    dims: Tuple[int, int] = (24, 24),
    channels: int = 6,
    n_landmarks: int = 3,
    n_targets: int = 2,
    model_id: str = DEFAULT_MODEL_ID,
    seed: int = 0,
) -> FixtureInfo:
    """Landmark task whose targets reuse the template features verbatim.

    Every target is pixel-identical to the template, so self-correspondence
    puts each landmark exactly on its ground-truth location (NED 0).
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    p, q = dims
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "features" / model_id).mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(exist_ok=True)

    pixels = rng.uniform(size=dims)
    data = rng.normal(size=(p, q, channels)).astype(np.float32)
    template = Image2D(pixels, id="template")
    save_image(template, root / "images" / "template.png")
    grid = FeatureGrid(data, 1, 1, 0.0, 0.0, dims)
    save_feature_grid(grid, root / "features" / model_id / "template.dfg1")

    landmarks = [
        (int(rng.integers(p)), int(rng.integers(q))) for _ in range(n_landmarks)
    ]
    landmarks = list(dict.fromkeys(landmarks))
    labels = [f"lm{i}" for i in range(len(landmarks))]
    save_prompts("template", PromptSet(positive=landmarks, labels=labels), root / "prompts.json")

    target_ids = []
    for t in range(n_targets):
        tid = f"target_{t:02d}"
        target_ids.append(tid)
        save_image(Image2D(pixels, id=tid), root / "images" / f"{tid}.png")
        save_feature_grid(grid, root / "features" / model_id / f"{tid}.dfg1")
        save_prompts(tid, PromptSet(positive=landmarks, labels=labels), root / "gt" / f"{tid}.json")

    manifest = {
        "task_id": f"landmarks-{seed}",
        "kind": "localization",
        "template": {"image": "images/template.png", "prompts": "prompts.json"},
        "targets": [f"images/{tid}.png" for tid in target_ids],
        "ground_truth": [f"gt/{tid}.json" for tid in target_ids],
        "models": [model_id],
        "enrichment": None,
        "features": {"kind": "file", "root": "features"},
        "predictor": None,
        "output_dir": "out",
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    info = FixtureInfo(
        root=root,
        manifest_path=manifest_path,
        kind="localization",
        template_id="template",
        target_ids=tuple(target_ids),
        roi_region=-1,
        dims=dims,
        model_id=model_id,
    )
    _write_fixture_info(info)
    return info


def _write_fixture_info(info: FixtureInfo) -> None:
    doc = {
        "kind": info.kind,
        "template": info.template_id,
        "targets": list(info.target_ids),
        "roi_region": info.roi_region,
        "dims": list(info.dims),
        "model": info.model_id,
        "manifest": info.manifest_path.name,
    }
    (info.root / "fixture.json").write_text(json.dumps(doc, indent=2) + "\n")
