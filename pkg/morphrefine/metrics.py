"""
Evaluation metrics: confusion counts, per-label and overall IoU, boundary
extraction, L1 distance to the boundary and seed quality.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from morphrefine.core import BinaryMask, LabelMap, SeedSet, same_grid
from morphrefine.errors import PipelineError, ValidationFailed

logger = logging.getLogger(__name__)


# ============================================================================
# Confusion counts and IoU
# ============================================================================

@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def zeros(cls, num_labels: int) -> "ConfusionCounts":
        z = np.zeros(num_labels, dtype=np.int64)
        return cls(z, z.copy(), z.copy())

    @property
    def num_labels(self) -> int:
        return int(self.tp.size)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if self.num_labels != other.num_labels:
            raise ValidationFailed("num_labels", "dimension-mismatch",
                                   f"{self.num_labels} vs {other.num_labels} labels")
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def per_label_iou(self) -> np.ndarray:
        """TP / (TP + FP + FN) per label; NaN for labels absent from both maps."""
        denom = (self.tp + self.fp + self.fn).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, self.tp / denom, np.nan)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "label": np.arange(self.num_labels),
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "iou": self.per_label_iou() * 100.0,
        })


def confusion(pred: LabelMap, gt: LabelMap, restrict: Optional[np.ndarray] = None) -> ConfusionCounts:
    """Count TP/FP/FN per label over pixels where gt is labelled (and `restrict` is true)."""
    same_grid(pred, gt, "pred")
    if pred.num_labels != gt.num_labels:
        raise ValidationFailed("num_labels", "dimension-mismatch",
                               f"pred has {pred.num_labels} labels, gt has {gt.num_labels}")
    k = gt.num_labels
    valid = gt.labeled
    if restrict is not None:
        restrict = np.asarray(restrict, dtype=bool)
        if restrict.shape != valid.shape:
            raise ValidationFailed("restrict", "dimension-mismatch")
        valid = valid & restrict

    g = gt.data[valid].astype(np.int64)
    # unlabelled predictions land in an extra "none" column
    p = np.minimum(pred.data[valid].astype(np.int64), k)
    matrix = np.bincount(g * (k + 1) + p, minlength=k * (k + 1)).reshape(k, k + 1)

    tp = np.diag(matrix[:, :k]).copy()
    fn = matrix.sum(axis=1) - tp
    fp = matrix[:, :k].sum(axis=0) - tp
    return ConfusionCounts(tp.astype(np.int64), fp.astype(np.int64), fn.astype(np.int64))


def overall_iou(counts: ConfusionCounts) -> float:
    denom = int((counts.tp + counts.fp + counts.fn).sum())
    if denom == 0:
        raise PipelineError("empty evaluation set: no labelled ground-truth pixels")
    return float(counts.tp.sum()) / denom


# ============================================================================
# Boundaries and distances
# ============================================================================

def boundary_mask(gt: LabelMap) -> BinaryMask:
    """Pixels with at least one 4-neighbour of a different label."""
    d = gt.data
    out = np.zeros(d.shape, dtype=bool)
    horiz = d[:, :-1] != d[:, 1:]
    vert = d[:-1, :] != d[1:, :]
    out[:, :-1] |= horiz
    out[:, 1:] |= horiz
    out[:-1, :] |= vert
    out[1:, :] |= vert
    return BinaryMask(gt.width, gt.height, out)


def l1_distance_transform(mask: BinaryMask) -> np.ndarray:
    """Exact Manhattan distance of every pixel to the nearest true pixel of `mask`."""
    if not mask.data.any():
        raise PipelineError("distance transform of an empty mask has no sources")
    return ndimage.distance_transform_cdt(~mask.data, metric="taxicab").astype(np.int64)


@dataclass(frozen=True)
class BoundaryHistogram:
    """Error counts indexed by L1 distance to the nearest ground-truth boundary pixel."""

    counts: np.ndarray

    @classmethod
    def empty(cls) -> "BoundaryHistogram":
        return cls(np.zeros(0, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def is_empty(self) -> bool:
        return self.total == 0

    def __add__(self, other: "BoundaryHistogram") -> "BoundaryHistogram":
        n = max(self.counts.size, other.counts.size)
        out = np.zeros(n, dtype=np.int64)
        out[: self.counts.size] += self.counts
        out[: other.counts.size] += other.counts
        return BoundaryHistogram(out)

    def frequencies(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(self.counts.size, dtype=np.float64)
        return self.counts / float(self.total)

    def to_frame(self) -> pd.DataFrame:
        """Sparse table: only distances that carry at least one error."""
        nz = np.flatnonzero(self.counts)
        return pd.DataFrame({
            "distance": nz,
            "count": self.counts[nz],
            "frequency": self.frequencies()[nz],
        })


def boundary_error_histogram(pred: LabelMap, gt: LabelMap) -> BoundaryHistogram:
    same_grid(pred, gt, "pred")
    boundary = boundary_mask(gt)
    if not boundary.data.any():
        raise PipelineError("ground truth has no boundary pixels")
    errors = (pred.data != gt.data) & gt.labeled
    if not errors.any():
        logger.info("No labelling errors; boundary histogram is empty")
        return BoundaryHistogram.empty()
    distance = l1_distance_transform(boundary)
    return BoundaryHistogram(np.bincount(distance[errors]).astype(np.int64))


# ============================================================================
# Seeds
# ============================================================================

def seed_quality(seeds: SeedSet, gt: LabelMap) -> Tuple[float, float]:
    """(coverage %, false-positive %) of a seed set against ground truth."""
    same_grid(seeds, gt, "seeds")
    if seeds.is_empty:
        raise PipelineError("seed quality of an empty seed set is undefined")
    coverage = 100.0 * len(seeds) / (seeds.width * seeds.height)
    wrong = int((gt.data.ravel()[seeds.pixels] != seeds.labels).sum())
    return coverage, 100.0 * wrong / len(seeds)


def iou_table(counts: ConfusionCounts) -> pd.DataFrame:
    """Per-label table with a final 'overall' row, IoU in percent."""
    frame = counts.to_frame()
    frame["label"] = frame["label"].astype(str)
    overall = pd.DataFrame([{
        "label": "overall",
        "tp": int(counts.tp.sum()),
        "fp": int(counts.fp.sum()),
        "fn": int(counts.fn.sum()),
        "iou": overall_iou(counts) * 100.0,
    }])
    return pd.concat([frame, overall], ignore_index=True)
