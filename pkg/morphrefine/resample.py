"""
Resampling on half-pixel aligned grids.

Output pixel i of an axis of length n_out maps to source coordinate
(i + 0.5) * n_src / n_out - 0.5. Bicubic and area resampling are separable and
expressed as sparse (n_out x n_src) matrices applied to each plane as
Wy @ plane @ Wx.T.
"""

from __future__ import annotations

import logging
from typing import Tuple

import numpy as np
from scipy import sparse

from morphrefine.core import ImageRgb, LabelMap, ProbMap
from morphrefine.errors import ValidationFailed

logger = logging.getLogger(__name__)

CATMULL_ROM_A = -0.5


def _check_size(out_w: int, out_h: int) -> None:
    if out_w < 1 or out_h < 1:
        raise ValidationFailed("size", "out-of-range", f"zero-sized output {out_w}x{out_h}")


def _check_upsample(src_w: int, src_h: int, out_w: int, out_h: int) -> None:
    _check_size(out_w, out_h)
    if out_w < src_w or out_h < src_h:
        raise ValidationFailed("size", "out-of-range",
                               f"upsampling target {out_w}x{out_h} smaller than source {src_w}x{src_h}")


def nn_upsample_labels(src: LabelMap, out_w: int, out_h: int) -> LabelMap:
    _check_upsample(src.width, src.height, out_w, out_h)
    # floor((i + 0.5) * n_src / n_out) in exact integer arithmetic
    rows = ((2 * np.arange(out_h) + 1) * src.height) // (2 * out_h)
    cols = ((2 * np.arange(out_w) + 1) * src.width) // (2 * out_w)
    return LabelMap(out_w, out_h, src.num_labels, src.data[np.ix_(rows, cols)])


def cubic_kernel(x: np.ndarray, a: float = CATMULL_ROM_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    far = ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def bicubic_matrix(n_src: int, n_out: int) -> sparse.csr_matrix:
    """Catmull-Rom interpolation weights with clamped source indices."""
    centers = (np.arange(n_out) + 0.5) * n_src / n_out - 0.5
    base = np.floor(centers).astype(np.int64)
    frac = centers - base
    rows, cols, vals = [], [], []
    for tap in (-1, 0, 1, 2):
        rows.append(np.arange(n_out))
        cols.append(np.clip(base + tap, 0, n_src - 1))
        vals.append(cubic_kernel(frac - tap))
    matrix = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(n_out, n_src))
    # duplicates from clamping are summed here
    return matrix.tocsr()


def area_matrix(n_src: int, n_out: int) -> sparse.csr_matrix:
    """Box-filter weights: overlap of each source pixel with the output footprint."""
    edges = np.arange(n_out + 1) * (n_src / n_out)
    rows, cols, vals = [], [], []
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        first, last = int(np.floor(lo)), min(int(np.ceil(hi)), n_src)
        js = np.arange(first, last)
        overlap = np.minimum(js + 1, hi) - np.maximum(js, lo)
        keep = overlap > 0
        rows.append(np.full(int(keep.sum()), i))
        cols.append(js[keep])
        vals.append(overlap[keep] / (hi - lo))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n_out, n_src))


def _apply_separable(planes: np.ndarray, wy: sparse.csr_matrix, wx: sparse.csr_matrix) -> np.ndarray:
    out = np.empty((planes.shape[0], wy.shape[0], wx.shape[0]), dtype=np.float64)
    for k, plane in enumerate(planes):
        tmp = wy @ plane.astype(np.float64)
        out[k] = (wx @ tmp.T).T
    return out


def bicubic_upsample_prob(src: ProbMap, out_w: int, out_h: int) -> ProbMap:
    _check_upsample(src.width, src.height, out_w, out_h)
    wy = bicubic_matrix(src.height, out_h)
    wx = bicubic_matrix(src.width, out_w)
    out = _apply_separable(src.data, wy, wx)
    np.maximum(out, 0.0, out=out)
    logger.debug(f"Bicubic upsample {src.width}x{src.height} -> {out_w}x{out_h}, {src.channels} channels")
    return ProbMap(out_w, out_h, src.channels, out.astype(np.float32))


def _check_downsample(src_w: int, src_h: int, out_w: int, out_h: int) -> None:
    _check_size(out_w, out_h)
    if out_w > src_w or out_h > src_h:
        raise ValidationFailed("size", "out-of-range",
                               f"downsampling target {out_w}x{out_h} larger than source {src_w}x{src_h}")


def area_downsample_image(src: ImageRgb, out_w: int, out_h: int) -> ImageRgb:
    _check_downsample(src.width, src.height, out_w, out_h)
    planes = np.moveaxis(np.asarray(src.data), 2, 0)
    out = _apply_separable(planes, area_matrix(src.height, out_h), area_matrix(src.width, out_w))
    out = np.clip(np.moveaxis(out, 0, 2), 0.0, 1.0)
    return ImageRgb(out_w, out_h, src.channels, out.astype(np.float32))


def area_downsample_prob(src: ProbMap, out_w: int, out_h: int) -> ProbMap:
    _check_downsample(src.width, src.height, out_w, out_h)
    out = _apply_separable(src.data, area_matrix(src.height, out_h), area_matrix(src.width, out_w))
    np.maximum(out, 0.0, out=out)
    return ProbMap(out_w, out_h, src.channels, out.astype(np.float32), normalized=src.normalized)


def long_axis_size(width: int, height: int, long_axis: int) -> Tuple[int, int]:
    """Aspect-preserving (width, height) whose longer side equals `long_axis`."""
    if long_axis < 1:
        raise ValidationFailed("long_axis", "out-of-range")
    if width >= height:
        return long_axis, max(1, int(round(height * long_axis / width)))
    return max(1, int(round(width * long_axis / height))), long_axis
