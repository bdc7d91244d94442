"""Quantitative evaluation: Dice, prompt accuracy, normalized localization
error, multiple correlation, and report aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Mask, Point
from .correspondence import Match, NEGATIVE, POSITIVE

# Clinical-usability bands for normalized localization error.
NED_ACCEPTABLE_BELOW = 0.05
NED_WORSE_ABOVE = 0.1

FLAG_ACCEPTABLE = "acceptable"
FLAG_INTERMEDIATE = "intermediate"
FLAG_WORSE = "worse"

REPORT_COLUMNS = [
    "task", "model", "n_targets",
    "dice_mean", "acc_pos_mean", "acc_neg_mean", "ned_mean", "ned_flag",
]


@dataclass(frozen=True)
class PromptAccuracy:
    """Fraction of positive prompts inside / negative prompts outside the
    ground-truth mask. A polarity with zero prompts reports 1.0 vacuously;
    its count stays 0 so aggregation can skip it."""

    positive: float
    negative: float
    n: int
    m: int

    @property
    def positive_vacuous(self) -> bool:
        return self.n == 0

    @property
    def negative_vacuous(self) -> bool:
        return self.m == 0


@dataclass(frozen=True)
class LocalizationError:
    per_landmark: Tuple[float, ...]
    mean: float
    normalizer: float


def dice(a: Mask, b: Mask) -> float:
    """Dice overlap 2|A^B| / (|A|+|B|); two empty masks count as identical (1.0)."""
    if a.dims != b.dims:
        raise ValueError(f"mask dims mismatch: {a.dims} vs {b.dims}")
    inter = int(np.logical_and(a.bits, b.bits).sum())
    total = a.area + b.area
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def prompt_accuracy(matches: Sequence[Match], gt: Mask) -> PromptAccuracy:
    """Per-polarity hit rates of propagated prompts against a GT mask."""
    p, q = gt.dims
    pos_hits = pos_total = neg_hits = neg_total = 0
    for m in matches:
        r, c = m.target
        if not (0 <= r < p and 0 <= c < q):
            raise ValueError(f"match target ({r}, {c}) outside mask dims {gt.dims}")
        inside = bool(gt.bits[r, c])
        if m.polarity == POSITIVE:
            pos_total += 1
            pos_hits += inside
        elif m.polarity == NEGATIVE:
            neg_total += 1
            neg_hits += not inside
        else:
            raise ValueError(f"unknown polarity {m.polarity!r}")
    positive = pos_hits / pos_total if pos_total else 1.0
    negative = neg_hits / neg_total if neg_total else 1.0
    return PromptAccuracy(positive, negative, pos_total, neg_total)


def localization_error(
    matches: Sequence[Match],
    gt_points: Sequence[Point],
    dims: Tuple[int, int],
) -> LocalizationError:
    """Mean Euclidean distance to ground-truth landmarks, normalized by the
    image diagonal sqrt(P^2 + Q^2)."""
    if len(matches) != len(gt_points):
        raise ValueError(f"{len(matches)} matches vs {len(gt_points)} ground-truth points")
    p, q = dims
    diag = math.sqrt(p * p + q * q)
    per = []
    for m, (gr, gc) in zip(matches, gt_points):
        tr, tc = m.target
        per.append(math.hypot(tr - gr, tc - gc) / diag)
    mean = sum(per) / len(per) if per else 0.0
    return LocalizationError(tuple(per), mean, diag)


def multiple_correlation(
    acc_pos: Sequence[float],
    acc_neg: Sequence[float],
    dice_scores: Sequence[float],
) -> float:
    """R of the least-squares fit dice ~ b0 + b1*acc_pos + b2*acc_neg.

    Zero-variance dice returns 0 by convention; a rank-deficient design is
    handled by the minimum-norm solution.
    """
    y = np.asarray(dice_scores, dtype=np.float64)
    ap = np.asarray(acc_pos, dtype=np.float64)
    an = np.asarray(acc_neg, dtype=np.float64)
    if not (len(y) == len(ap) == len(an)):
        raise ValueError("acc_pos, acc_neg and dice must have equal lengths")
    if len(y) < 3:
        raise ValueError("need at least 3 samples for multiple correlation")

    if np.ptp(y) == 0.0:  # zero-variance dice
        return 0.0
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        return 0.0
    design = np.column_stack([np.ones_like(y), ap, an])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    ss_res = float(np.sum((y - design @ beta) ** 2))
    r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return math.sqrt(r2)


def ned_flag(value: float) -> str:
    if value < NED_ACCEPTABLE_BELOW:
        return FLAG_ACCEPTABLE
    if value > NED_WORSE_ABOVE:
        return FLAG_WORSE
    return FLAG_INTERMEDIATE


@dataclass(frozen=True)
class TargetMetrics:
    """Metrics of one (task, model, target) evaluation cell."""

    task: str
    model: str
    target: str
    status: str = "ok"  # "ok" or "failed: <reason>"
    dice: Optional[float] = None
    accuracy: Optional[PromptAccuracy] = None
    ned: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict:
        doc = {"task": self.task, "model": self.model, "target": self.target, "status": self.status}
        if self.dice is not None:
            doc["dice"] = self.dice
        if self.accuracy is not None:
            doc["acc_pos"] = self.accuracy.positive
            doc["acc_neg"] = self.accuracy.negative
            doc["n_pos"] = self.accuracy.n
            doc["n_neg"] = self.accuracy.m
        if self.ned is not None:
            doc["ned"] = self.ned
        return doc


@dataclass(frozen=True)
class ReportRow:
    task: str
    model: str
    n_targets: int
    dice_mean: Optional[float]
    acc_pos_mean: Optional[float]
    acc_neg_mean: Optional[float]
    ned_mean: Optional[float]
    ned_flag: Optional[str]


def _mean(values: List[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def aggregate_report(per_target_metrics: Sequence[TargetMetrics]) -> List[ReportRow]:
    """Per-(task, model) means over the successful cells.

    Vacuous accuracy entries (zero prompts of a polarity) are excluded from
    that polarity's mean. NED means carry the clinical flag.
    """
    if len(per_target_metrics) == 0:
        raise ValueError("no metrics to aggregate")
    groups: Dict[Tuple[str, str], List[TargetMetrics]] = {}
    for tm in per_target_metrics:
        groups.setdefault((tm.task, tm.model), []).append(tm)

    rows = []
    for (task, model) in sorted(groups):
        entries = [tm for tm in groups[(task, model)] if tm.ok]
        dice_mean = _mean([tm.dice for tm in entries if tm.dice is not None])
        acc_pos_mean = _mean([
            tm.accuracy.positive for tm in entries
            if tm.accuracy is not None and not tm.accuracy.positive_vacuous
        ])
        acc_neg_mean = _mean([
            tm.accuracy.negative for tm in entries
            if tm.accuracy is not None and not tm.accuracy.negative_vacuous
        ])
        ned_mean = _mean([tm.ned for tm in entries if tm.ned is not None])
        rows.append(ReportRow(
            task=task,
            model=model,
            n_targets=len(entries),
            dice_mean=dice_mean,
            acc_pos_mean=acc_pos_mean,
            acc_neg_mean=acc_neg_mean,
            ned_mean=ned_mean,
            ned_flag=ned_flag(ned_mean) if ned_mean is not None else None,
        ))
    return rows


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def report_to_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([
            row.task, row.model, row.n_targets,
            _fmt(row.dice_mean), _fmt(row.acc_pos_mean), _fmt(row.acc_neg_mean),
            _fmt(row.ned_mean), row.ned_flag or "",
        ])
    return buf.getvalue()


def report_to_json(rows: Sequence[ReportRow]) -> str:
    docs = []
    for row in rows:
        docs.append({
            "task": row.task,
            "model": row.model,
            "n_targets": row.n_targets,
            "dice_mean": row.dice_mean,
            "acc_pos_mean": row.acc_pos_mean,
            "acc_neg_mean": row.acc_neg_mean,
            "ned_mean": row.ned_mean,
            "ned_flag": row.ned_flag,
        })
    return json.dumps(docs, indent=2) + "\n"
