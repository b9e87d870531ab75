# -*- coding: utf-8 -*-
"""
Evaluation measures for continuous prediction maps against binary ground truth: IoU, MAE, E-measure and Pearson
correlation (CC), plus the per image records and the aggregated report.

Report files are line delimited JSON: one record per (fold, episode, image) with the fields
fold, episode_id, image_id, iou, mae, e_phi, cc, flags - followed by one aggregate line with episode_id and image_id
set to "mean" and an additional field count.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import pathlib
from typing import Any, Optional, Sequence

import numpy as np

# define logger using the current module name as ID
logger = logging.getLogger(__name__)

THRESHOLD: float = 0.5

FLAG_CC_DEGENERATE = "cc_zero_variance"

RECORD_FIELDS: tuple[str, ...] = ("fold", "episode_id", "image_id", "iou", "mae", "e_phi", "cc", "flags")


class MetricsError(Exception):
    """
    Exception raised by the metric functions.
    """


def _pair(pred: Any, gt: Any) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricsError(f"Shape mismatch between prediction {pred.shape} and ground truth {gt.shape}")
    return pred, gt


def iou(pred: Any, gt: Any, threshold: float = THRESHOLD) -> float:
    """
    |P and G| / |P or G| with P = pred >= threshold; 1.0 if both are empty.
    """
    pred, gt = _pair(pred, gt)
    p = pred >= threshold
    g = gt > 0.5
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def mae(pred: Any, gt: Any) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def e_measure(pred: Any, gt: Any, threshold: float = THRESHOLD) -> float:
    """
    Enhanced alignment measure of the binarized prediction. Bias matrices phi = X - mean(X), alignment
    xi = 2 phi_P phi_G / (phi_P^2 + phi_G^2) with 0/0 = 0, enhanced value (xi + 1)^2 / 4, averaged over all pixels.
    An all-zero ground truth gives 1 - mean(P), an all-one ground truth gives mean(P).
    """
    pred, gt = _pair(pred, gt)
    if pred.size < 2:
        raise MetricsError("E-measure needs at least 2 pixels")
    p = (pred >= threshold).astype(np.float64)
    g = (gt > 0.5).astype(np.float64)

    if g.sum() == 0:
        return float(1.0 - p.mean())
    if g.sum() == g.size:
        return float(p.mean())

    phi_p = p - p.mean()
    phi_g = g - g.mean()
    num = 2.0 * phi_p * phi_g
    den = phi_p * phi_p + phi_g * phi_g
    xi = np.divide(num, den, out=np.zeros_like(num), where=den != 0)
    enhanced = (xi + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def cc_is_degenerate(pred: Any, gt: Any) -> bool:
    pred, gt = _pair(pred, gt)
    return bool(pred.std() == 0 or gt.std() == 0)


def cc(pred: Any, gt: Any) -> float:
    """
    Pearson correlation over all pixels; 0.0 if one of the maps has zero variance (see cc_is_degenerate()).
    """
    pred, gt = _pair(pred, gt)
    if pred.size < 2:
        raise MetricsError("CC needs at least 2 pixels")
    if cc_is_degenerate(pred, gt):
        return 0.0
    dp = pred - pred.mean()
    dg = gt - gt.mean()
    value = (dp * dg).sum() / np.sqrt((dp * dp).sum() * (dg * dg).sum())
    return float(np.clip(value, -1.0, 1.0))


@dataclasses.dataclass
class ImageMetrics:
    """
    Metric values of a single query image.
    """
    fold: int
    episode_id: int
    image_id: int
    iou: float
    mae: float
    e_phi: float
    cc: float
    flags: list[str] = dataclasses.field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {key: getattr(self, key) for key in RECORD_FIELDS}


def evaluate_image(
        pred: Any,
        gt: Any,
        fold: int = 0,
        episode_id: int = 0,
        image_id: int = 0,
        threshold: float = THRESHOLD,
) -> ImageMetrics:
    """
    Compute all four metrics for one prediction map.
    """
    pred, gt = _pair(np.squeeze(pred), np.squeeze(gt))
    flags = []
    if cc_is_degenerate(pred, gt):
        flags.append(FLAG_CC_DEGENERATE)
    return ImageMetrics(
        fold=fold,
        episode_id=episode_id,
        image_id=image_id,
        iou=iou(pred, gt, threshold=threshold),
        mae=mae(pred, gt),
        e_phi=e_measure(pred, gt, threshold=threshold),
        cc=cc(pred, gt),
        flags=flags,
    )


@dataclasses.dataclass
class MetricsReport:
    """
    Aggregate (arithmetic mean over all images) of the per image records.
    """
    iou: float
    mae: float
    e_phi: float
    cc: float
    count: int
    fold_id: int
    records: list[ImageMetrics] = dataclasses.field(default_factory=list)
    flags: list[str] = dataclasses.field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[ImageMetrics], fold_id: int) -> MetricsReport:
        records = list(records)
        if not records:
            return cls(iou=0.0, mae=0.0, e_phi=0.0, cc=0.0, count=0, fold_id=fold_id, records=[])

        flags = sorted({flag for rec in records for flag in rec.flags})
        return cls(
            iou=float(np.mean([r.iou for r in records])),
            mae=float(np.mean([r.mae for r in records])),
            e_phi=float(np.mean([r.e_phi for r in records])),
            cc=float(np.mean([r.cc for r in records])),
            count=len(records),
            fold_id=fold_id,
            records=records,
            flags=flags,
        )

    def aggregate_dict(self) -> dict[str, Any]:
        return {
            "fold": self.fold_id,
            "episode_id": "mean",
            "image_id": "mean",
            "iou": self.iou,
            "mae": self.mae,
            "e_phi": self.e_phi,
            "cc": self.cc,
            "flags": self.flags,
            "count": self.count,
        }

    def write(self, path: str | os.PathLike) -> pathlib.Path:
        """
        Write all records and the aggregate line as line delimited JSON.
        """
        path = pathlib.Path(path)
        lines = [json.dumps(rec.to_dict(), sort_keys=False) for rec in self.records]
        lines.append(json.dumps(self.aggregate_dict(), sort_keys=False))
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        logger.info("Wrote metrics report with %d records to %s", self.count, path)
        return path

    @classmethod
    def read(cls, path: str | os.PathLike) -> MetricsReport:
        """
        Read a report file; the aggregate is recomputed from the records.
        """
        records = []
        fold_id: Optional[int] = None
        for line in pathlib.Path(path).read_text(encoding='utf-8').splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            if data.get("episode_id") == "mean":
                fold_id = int(data["fold"])
                continue
            records.append(ImageMetrics(**{key: data[key] for key in RECORD_FIELDS}))
        if fold_id is None:
            fold_id = records[0].fold if records else 0
        return cls.from_records(records, fold_id=fold_id)
