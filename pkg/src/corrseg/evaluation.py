"""Batch evaluation: per-task, per-model metric tables and robustness sweeps.

A manifest names one annotated template, the target images, ground truth,
feature source and mask predictor. Every (model, target) cell is evaluated
independently; a failing cell is recorded with its reason instead of aborting
the run, and reruns produce byte-identical reports.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .backends import (
    ExternalFeatureProvider,
    FeatureProvider,
    FileFeatureProvider,
    ModelSpec,
    registry_lookup,
)
from .clustering import co_cluster, render_label_overlay
from .core import Image2D, PixelFeatureMap, PromptSet
from .correspondence import HORIZONTAL, VERTICAL, correspond, flip, flip_prompts, heatmap_to_codes, similarity_heatmap
from .descriptors import LogBinParams
from .fileio import (
    load_image,
    load_label_image,
    load_mask,
    load_prompts,
    save_gray_png,
    save_mask,
    save_rgb_png,
)
from .metrics import (
    TargetMetrics,
    aggregate_report,
    dice,
    localization_error,
    prompt_accuracy,
    report_to_csv,
    report_to_json,
)
from .pipeline import pixel_feature_map
from .segmentation import ExternalMaskPredictor, MaskPredictor, OraclePredictor, segment_with_prompts

logger = logging.getLogger(__name__)

SEGMENTATION = "segmentation"
LOCALIZATION = "localization"

CELL_COLUMNS = ["task", "model", "target", "status", "dice", "acc_pos", "acc_neg", "ned"]
ROBUSTNESS_COLUMNS = ["task", "model", "variant", "n_targets", "ned_mean"]


@dataclass
class PredictorConfig:
    kind: str  # "oracle" | "external"
    labels: Optional[List[Path]] = None
    endpoint: Optional[str] = None


@dataclass
class FeatureSourceConfig:
    kind: str  # "file" | "external"
    root: Optional[Path] = None
    endpoint: Optional[str] = None
    image_root: Optional[Path] = None
    stride: Optional[int] = None
    samples: Optional[int] = None


@dataclass
class TaskManifest:
    task_id: str
    kind: str
    template_image: Path
    template_prompts: Path
    targets: List[Path]
    ground_truth: List[Path]
    models: List[str]
    features: FeatureSourceConfig
    enrichment: Optional[LogBinParams] = None
    predictor: Optional[PredictorConfig] = None
    output_dir: Path = Path("out")
    export_heatmaps: bool = False

    @classmethod
    def load(cls, path) -> "TaskManifest":
        """Parse a manifest JSON; relative paths resolve against its directory."""
        path = Path(path)
        doc = json.loads(path.read_text())
        base = path.parent

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        kind = doc["kind"]
        if kind not in (SEGMENTATION, LOCALIZATION):
            raise ValueError(f"unknown task kind {kind!r}")
        targets = [resolve(p) for p in doc["targets"]]
        ground_truth = [resolve(p) for p in doc["ground_truth"]]
        if len(targets) != len(ground_truth):
            raise ValueError("targets and ground_truth lengths differ")

        feat = doc["features"]
        features = FeatureSourceConfig(
            kind=feat["kind"],
            root=resolve(feat["root"]) if feat.get("root") else None,
            endpoint=feat.get("endpoint"),
            image_root=resolve(feat["image_root"]) if feat.get("image_root") else None,
            stride=feat.get("stride"),
            samples=feat.get("samples"),
        )

        predictor = None
        if doc.get("predictor"):
            pred = doc["predictor"]
            predictor = PredictorConfig(
                kind=pred["kind"],
                labels=[resolve(p) for p in pred["labels"]] if pred.get("labels") else None,
                endpoint=pred.get("endpoint"),
            )

        enrichment = None
        if doc.get("enrichment"):
            enrichment = LogBinParams.from_json(doc["enrichment"])

        return cls(
            task_id=doc["task_id"],
            kind=kind,
            template_image=resolve(doc["template"]["image"]),
            template_prompts=resolve(doc["template"]["prompts"]),
            targets=targets,
            ground_truth=ground_truth,
            models=list(doc["models"]),
            features=features,
            enrichment=enrichment,
            predictor=predictor,
            output_dir=resolve(doc.get("output_dir", "out")),
            export_heatmaps=bool(doc.get("export_heatmaps", False)),
        )

    def build_provider(self) -> FeatureProvider:
        if self.features.kind == "file":
            if self.features.root is None:
                raise ValueError("file feature source needs a root directory")
            return FileFeatureProvider(self.features.root)
        if self.features.kind == "external":
            if not self.features.endpoint:
                raise ValueError("external feature source needs an endpoint")
            image_root = self.features.image_root or self.template_image.parent
            return ExternalFeatureProvider(
                self.features.endpoint,
                image_root=image_root,
                stride=self.features.stride,
                samples=self.features.samples,
            )
        raise ValueError(f"unknown feature source kind {self.features.kind!r}")

    def build_predictor(self, target_index: int) -> MaskPredictor:
        if self.predictor is None:
            raise ValueError("manifest has no predictor configured")
        if self.predictor.kind == "oracle":
            if not self.predictor.labels:
                raise ValueError("oracle predictor needs per-target label images")
            return OraclePredictor(load_label_image(self.predictor.labels[target_index]))
        if self.predictor.kind == "external":
            if not self.predictor.endpoint:
                raise ValueError("external predictor needs an endpoint")
            return ExternalMaskPredictor(self.predictor.endpoint)
        raise ValueError(f"unknown predictor kind {self.predictor.kind!r}")


@dataclass
class EvalRun:
    manifest: TaskManifest
    cells: List[TargetMetrics]
    output_dir: Path
    results_csv: Path
    report_csv: Path
    report_json: Path

    @property
    def failed(self) -> int:
        return sum(1 for c in self.cells if not c.ok)

    @property
    def ok(self) -> bool:
        return self.failed == 0


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def _cells_csv(cells: Sequence[TargetMetrics]) -> str:
    lines = [",".join(CELL_COLUMNS)]
    for c in cells:
        acc_pos = c.accuracy.positive if c.accuracy else None
        acc_neg = c.accuracy.negative if c.accuracy else None
        status = c.status.replace(",", ";")
        lines.append(",".join([
            c.task, c.model, c.target, status,
            _fmt(c.dice), _fmt(acc_pos), _fmt(acc_neg), _fmt(c.ned),
        ]))
    return "\n".join(lines) + "\n"


class _TemplateContext:
    """Template image, prompts and per-model feature maps, computed once."""

    def __init__(self, manifest: TaskManifest, provider: FeatureProvider):
        self.manifest = manifest
        self.provider = provider
        self.image = load_image(manifest.template_image)
        _, self.prompts = load_prompts(manifest.template_prompts)
        self.prompts.validate_bounds(self.image.dims)
        self._maps: Dict[str, PixelFeatureMap] = {}

    def feature_map(self, model: ModelSpec) -> PixelFeatureMap:
        if model.id not in self._maps:
            grid = self.provider.features_for(self.image.id, model)
            if grid.source_dims != self.image.dims:
                raise ValueError(
                    f"feature geometry {grid.source_dims} inconsistent with "
                    f"template dims {self.image.dims}"
                )
            self._maps[model.id] = pixel_feature_map(grid, self.manifest.enrichment)
        return self._maps[model.id]


def _target_feature_map(
    manifest: TaskManifest,
    provider: FeatureProvider,
    image: Image2D,
    model: ModelSpec,
) -> PixelFeatureMap:
    grid = provider.features_for(image.id, model)
    if grid.source_dims != image.dims:
        raise ValueError(
            f"feature geometry {grid.source_dims} inconsistent with "
            f"target dims {image.dims}"
        )
    return pixel_feature_map(grid, manifest.enrichment)


def _load_landmarks(path: Path, prompts: PromptSet) -> List[Tuple[int, int]]:
    _, gt = load_prompts(path)
    if len(gt.positive) != len(prompts.positive):
        raise ValueError(
            f"{len(gt.positive)} ground-truth landmarks for {len(prompts.positive)} prompts"
        )
    return list(gt.positive)


def _eval_cell(
    manifest: TaskManifest,
    provider: FeatureProvider,
    template: _TemplateContext,
    model_id: str,
    target_index: int,
    out_dir: Path,
) -> TargetMetrics:
    target_path = manifest.targets[target_index]
    target_name = target_path.stem
    started = time.perf_counter()
    try:
        model = registry_lookup(model_id)
        template_map = template.feature_map(model)
        image = load_image(target_path)
        target_map = _target_feature_map(manifest, provider, image, model)
        matches = correspond(template_map, template.prompts, target_map)

        if manifest.kind == SEGMENTATION:
            gt = load_mask(manifest.ground_truth[target_index])
            if gt.dims != image.dims:
                raise ValueError(f"ground-truth dims {gt.dims} != target dims {image.dims}")
            predictor = manifest.build_predictor(target_index)
            outcome = segment_with_prompts(image, matches, predictor)
            cell = TargetMetrics(
                task=manifest.task_id,
                model=model_id,
                target=target_name,
                dice=dice(outcome.mask, gt),
                accuracy=prompt_accuracy(matches, gt),
            )
            mask_path = out_dir / "masks" / f"{model_id}__{target_name}.png"
            save_mask(outcome.mask, mask_path)
            extra = outcome.to_json()
        else:
            gt_points = _load_landmarks(manifest.ground_truth[target_index], template.prompts)
            positives = [m for m in matches if m.polarity == "positive"]
            err = localization_error(positives, gt_points, image.dims)
            cell = TargetMetrics(
                task=manifest.task_id, model=model_id, target=target_name, ned=err.mean,
            )
            extra = {
                "per_landmark": list(err.per_landmark),
                "matches": [m.to_json() for m in matches],
            }

        if manifest.export_heatmaps:
            hm_dir = out_dir / "heatmaps"
            for idx, point in enumerate(template.prompts.positive):
                hm = similarity_heatmap(template_map, point, target_map)
                save_gray_png(heatmap_to_codes(hm), hm_dir / f"{model_id}__{target_name}__p{idx}.png")

        doc = cell.to_json()
        doc.update(extra)
        cell_path = out_dir / "cells" / f"{model_id}__{target_name}.json"
        cell_path.write_text(json.dumps(doc, indent=2) + "\n")
        logger.info(
            "cell %s/%s done in %.3fs", model_id, target_name, time.perf_counter() - started
        )
        return cell
    except Exception as exc:
        logger.warning("cell %s/%s failed: %s", model_id, target_name, exc)
        return TargetMetrics(
            task=manifest.task_id,
            model=model_id,
            target=target_name,
            status=f"failed: {exc}",
        )


def _default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


def run_eval(
    manifest: TaskManifest,
    models: Optional[Sequence[str]] = None,
    jobs: Optional[int] = None,
) -> EvalRun:
    """Evaluate every (model, target) cell and write per-cell and aggregate reports."""
    model_ids = list(models) if models else list(manifest.models)
    provider = manifest.build_provider()
    template = _TemplateContext(manifest, provider)
    out_dir = manifest.output_dir
    for sub in ("cells", "masks") + (("heatmaps",) if manifest.export_heatmaps else ()):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    jobs = jobs or _default_jobs()
    tasks = [(m, t) for m in model_ids for t in range(len(manifest.targets))]
    # warm template maps serially so worker threads only read the cache
    for m in model_ids:
        try:
            template.feature_map(registry_lookup(m))
        except Exception:
            pass  # surfaces per cell with the cell's failure reason
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        cells = list(pool.map(
            lambda mt: _eval_cell(manifest, provider, template, mt[0], mt[1], out_dir),
            tasks,
        ))

    cells.sort(key=lambda c: (c.model, c.target))
    results_csv = out_dir / "results.csv"
    results_csv.write_text(_cells_csv(cells))
    rows = aggregate_report(cells)
    report_csv = out_dir / "report.csv"
    report_csv.write_text(report_to_csv(rows))
    report_json = out_dir / "report.json"
    report_json.write_text(report_to_json(rows))
    return EvalRun(manifest, cells, out_dir, results_csv, report_csv, report_json)


BASELINE = "baseline"


def run_robustness(
    manifest: TaskManifest,
    axes: Sequence[str],
    models: Optional[Sequence[str]] = None,
    jobs: Optional[int] = None,
) -> Path:
    """Localization sweep with the template flipped per axis, targets untouched.

    File-backed features are flipped by the engine; an external provider is
    asked for features of the flipped image instead. Writes robustness.csv
    with one row per (model, variant) plus the baseline.
    """
    if manifest.kind != LOCALIZATION:
        raise ValueError("robustness sweeps require a localization manifest")
    for axis in axes:
        if axis not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"unknown axis {axis!r}")

    model_ids = list(models) if models else list(manifest.models)
    provider = manifest.build_provider()
    template = _TemplateContext(manifest, provider)
    out_dir = manifest.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = jobs or _default_jobs()

    variants = [BASELINE] + list(axes)
    lines = [",".join(ROBUSTNESS_COLUMNS)]
    cell_rows: List[TargetMetrics] = []

    for model_id in model_ids:
        for variant in variants:
            try:
                model = registry_lookup(model_id)
                if variant == BASELINE:
                    tmpl_map = template.feature_map(model)
                    prompts = template.prompts
                else:
                    flipped_image = flip(template.image, variant)
                    prompts = flip_prompts(template.prompts, template.image.dims, variant)
                    if isinstance(provider, ExternalFeatureProvider):
                        grid = provider.features_for_image(
                            flipped_image, model, cache_key=f"{template.image.id}::{variant}"
                        )
                        if grid.source_dims != flipped_image.dims:
                            raise ValueError(
                                f"feature geometry {grid.source_dims} inconsistent with "
                                f"template dims {flipped_image.dims}"
                            )
                        tmpl_map = pixel_feature_map(grid, manifest.enrichment)
                    else:
                        tmpl_map = flip(template.feature_map(model), variant)
            except Exception as exc:
                # variant preparation failed: isolate, mark every cell failed
                logger.warning("robustness variant %s/%s failed: %s", model_id, variant, exc)
                cells = [
                    TargetMetrics(
                        task=manifest.task_id, model=model_id,
                        target=f"{path.stem}@{variant}",
                        status=f"failed: {exc}",
                    )
                    for path in manifest.targets
                ]
                cell_rows.extend(cells)
                lines.append(",".join([manifest.task_id, model_id, variant, "0", ""]))
                continue

            def eval_target(t: int) -> TargetMetrics:
                target_path = manifest.targets[t]
                try:
                    image = load_image(target_path)
                    target_map = _target_feature_map(manifest, provider, image, model)
                    matches = correspond(tmpl_map, prompts, target_map)
                    gt_points = _load_landmarks(manifest.ground_truth[t], prompts)
                    err = localization_error(
                        [m for m in matches if m.polarity == "positive"],
                        gt_points,
                        image.dims,
                    )
                    return TargetMetrics(
                        task=manifest.task_id, model=model_id,
                        target=f"{target_path.stem}@{variant}", ned=err.mean,
                    )
                except Exception as exc:
                    logger.warning("robustness cell %s/%s@%s failed: %s",
                                   model_id, target_path.stem, variant, exc)
                    return TargetMetrics(
                        task=manifest.task_id, model=model_id,
                        target=f"{target_path.stem}@{variant}",
                        status=f"failed: {exc}",
                    )

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                cells = list(pool.map(eval_target, range(len(manifest.targets))))
            cell_rows.extend(cells)
            neds = [c.ned for c in cells if c.ok and c.ned is not None]
            mean = sum(neds) / len(neds) if neds else None
            lines.append(",".join([
                manifest.task_id, model_id, variant, str(len(neds)), _fmt(mean),
            ]))

    csv_path = out_dir / "robustness.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    (out_dir / "robustness_cells.csv").write_text(_cells_csv(cell_rows))
    return csv_path


def run_cluster(
    manifest: TaskManifest,
    k: int,
    seed: int,
    models: Optional[Sequence[str]] = None,
    normalize: bool = False,
) -> Path:
    """Co-cluster target-pixel features per model and export colored overlays."""
    model_ids = list(models) if models else list(manifest.models)
    provider = manifest.build_provider()
    out_dir = manifest.output_dir / "clusters"
    out_dir.mkdir(parents=True, exist_ok=True)

    summary = {}
    for model_id in model_ids:
        model = registry_lookup(model_id)
        images = [load_image(p) for p in manifest.targets]
        maps = [
            _target_feature_map(manifest, provider, image, model) for image in images
        ]
        result = co_cluster(maps, k=k, seed=seed, normalize=normalize)
        for image, labels in zip(images, result.label_maps):
            overlay = render_label_overlay(image, labels, palette_seed=seed)
            save_rgb_png(overlay, out_dir / f"{model_id}__{image.id}.png")
        summary[model_id] = {
            "k": result.k,
            "seed": seed,
            "inertia": result.inertia,
            "iterations": result.iterations,
        }
    meta_path = out_dir / "clusters.json"
    meta_path.write_text(json.dumps(summary, indent=2) + "\n")
    return meta_path
