"""
Edge weights of the 4-adjacency grid graph from a boundary-probability map.

    w_ij = exp(-beta * (p_i + p_j)^2 / sigma)

with sigma the population standard deviation of all probabilities of the map.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from morphrefine.core import WEIGHT_FLOOR, EdgeWeightGrid, ImageRgb, ProbMap
from morphrefine.errors import ValidationFailed

logger = logging.getLogger(__name__)

NORMALIZE_PERCENTILE = 99.0


def _boundary_plane(bound_prob: ProbMap) -> np.ndarray:
    if bound_prob.channels != 1:
        raise ValidationFailed("channels", "out-of-range",
                               f"boundary probability must have one channel, got {bound_prob.channels}")
    p = np.asarray(bound_prob.data[0], dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValidationFailed("data", "non-finite")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValidationFailed("data", "out-of-range", "boundary probabilities must lie in [0, 1]")
    return p


def edge_weights(bound_prob: ProbMap, beta: float) -> EdgeWeightGrid:
    if not beta > 0:
        raise ValidationFailed("beta", "out-of-range", f"beta must be positive, got {beta}")
    p = _boundary_plane(bound_prob)
    h, w = p.shape
    sigma = float(np.std(p))

    if sigma == 0.0:
        logger.warning("Boundary probability map is constant; using uniform edge weights")
        return EdgeWeightGrid.uniform(w, h, 1.0)

    horizontal = np.exp(-beta * (p[:, :-1] + p[:, 1:]) ** 2 / sigma)
    vertical = np.exp(-beta * (p[:-1, :] + p[1:, :]) ** 2 / sigma)
    floored = int((horizontal < WEIGHT_FLOOR).sum() + (vertical < WEIGHT_FLOOR).sum())
    if floored:
        logger.debug(f"{floored} edge weights raised to the floor {WEIGHT_FLOOR}")
    logger.info(f"Edge weights for {w}x{h} grid: beta={beta}, sigma={sigma:.6f}")
    return EdgeWeightGrid.from_arrays(horizontal, vertical, floor=True)


def fallback_boundary_prob(img: ImageRgb) -> ProbMap:
    """Sobel gradient magnitude of luminance, scaled by its 99th percentile and clamped to [0, 1]."""
    lum = img.luminance()
    gx = ndimage.sobel(lum, axis=1, mode="nearest")
    gy = ndimage.sobel(lum, axis=0, mode="nearest")
    magnitude = np.hypot(gx, gy)

    scale = float(np.percentile(magnitude, NORMALIZE_PERCENTILE)) if magnitude.size else 0.0
    if scale <= 0.0:
        scale = float(magnitude.max()) if magnitude.size else 0.0
    if scale <= 0.0:
        return ProbMap.from_array(np.zeros_like(magnitude)[None])
    out = np.clip(magnitude / scale, 0.0, 1.0)
    return ProbMap.from_array(out[None])
