"""
Seed selection: top-2 margin filtering of upsampled class probabilities
followed by per-label thinning and pruning.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from morphrefine.core import UNLABELED, BinaryMask, LabelMap, ProbMap, SeedSet
from morphrefine.errors import PipelineError, ValidationFailed
from morphrefine.morphology import prune, thin

logger = logging.getLogger(__name__)


def potential_seeds(probs_hi: ProbMap, t: float) -> LabelMap:
    """Argmax label where the top-2 probability margin is at least `t`, else UNLABELED."""
    if probs_hi.channels < 2:
        raise PipelineError(f"potential seeds need at least 2 classes, got {probs_hi.channels}")
    if not 0.0 <= t <= 1.0:
        raise ValidationFailed("t", "out-of-range", f"t must lie in [0, 1], got {t}")

    data = np.asarray(probs_hi.data, dtype=np.float64)
    best = np.argmax(data, axis=0)  # first maximum wins ties
    top_two = np.partition(data, data.shape[0] - 2, axis=0)[-2:]
    margin = top_two[1] - top_two[0]

    out = np.where(margin >= t, best, UNLABELED).astype(np.uint8)
    kept = int((out != UNLABELED).sum())
    logger.info(f"Potential seeds: {kept}/{out.size} pixels pass margin t={t}")
    return LabelMap(probs_hi.width, probs_hi.height, probs_hi.channels, out)


def _trim(mask: np.ndarray, n_thin: int, n_prun: int) -> np.ndarray:
    """Thin then prune inside the bounding box; outside the box is background either way."""
    box = ndimage.find_objects(mask.astype(np.uint8))[0]
    padded = tuple(slice(max(s.start - 1, 0), s.stop + 1) for s in box)
    crop = mask[padded]
    h, w = crop.shape
    trimmed = prune(thin(BinaryMask(w, h, crop), n_thin), n_prun).data
    out = np.zeros_like(mask)
    out[padded] = trimmed
    return out


def select_seeds(potential: LabelMap, n_thin: int, n_prun: int) -> SeedSet:
    if n_thin < 0 or n_prun < 0:
        raise ValidationFailed("n_iter", "out-of-range", "iteration counts must be non-negative")

    flat_pixels, flat_labels = [], []
    for label in potential.present_labels():
        mask = potential.data == label
        trimmed = _trim(mask, n_thin, n_prun) if (n_thin or n_prun) else mask
        if not trimmed.any():
            logger.warning(f"Label {label}: trimming removed every pixel, keeping the untrimmed mask")
            trimmed = mask
        pixels = np.flatnonzero(trimmed)
        logger.debug(f"Label {label}: {int(mask.sum())} potential -> {pixels.size} seeds")
        flat_pixels.append(pixels)
        flat_labels.append(np.full(pixels.size, label, dtype=np.uint8))

    if flat_pixels:
        pixels = np.concatenate(flat_pixels)
        labels = np.concatenate(flat_labels)
    else:
        pixels = np.empty(0, dtype=np.int64)
        labels = np.empty(0, dtype=np.uint8)
    seeds = SeedSet.from_entries(potential.width, potential.height, potential.num_labels, pixels, labels)
    logger.info(f"Selected {len(seeds)} seeds over {seeds.distinct_labels().size} labels "
                f"(n_thin={n_thin}, n_prun={n_prun})")
    return seeds


def seeds_from_ground_truth(gt: LabelMap, n_thin: int, n_prun: int) -> SeedSet:
    if not gt.labeled.all():
        raise PipelineError("ground truth contains UNLABELED pixels",
                            suggestion="ground-truth seeding needs a fully annotated map")
    return select_seeds(gt, n_thin, n_prun)
