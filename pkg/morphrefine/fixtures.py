"""
Synthetic scenes: a disk and a thin bar with a perfect boundary-probability
map and a corrupted low-resolution class estimate.

Label 0 is background, label 1 the object.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable

import numpy as np

from morphrefine.core import ImageRgb, LabelMap, ProbMap
from morphrefine.dataset import Scene
from morphrefine.metrics import boundary_mask
from morphrefine.raster_io import save_image, save_labels, save_prb
from morphrefine.resample import area_downsample_image, area_downsample_prob, long_axis_size

logger = logging.getLogger(__name__)

SHAPES = ("disk", "bar")
OBJECT_RGB = np.array([0.85, 0.35, 0.20])
BACKGROUND_RGB = np.array([0.20, 0.45, 0.70])


def _signed_distance(shape: str, size: int) -> np.ndarray:
    """Signed distance of every pixel centre to the contour, negative inside."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    unit = size / 512.0
    cy, cx = 0.5 * size + 0.3 * unit, 0.5 * size - 0.3 * unit

    if shape == "disk":
        return np.hypot(y - cy, x - cx) - 150.4 * unit

    if shape == "bar":
        angle = np.deg2rad(30.0)
        u = (x - cx) * np.cos(angle) + (y - cy) * np.sin(angle)
        v = -(x - cx) * np.sin(angle) + (y - cy) * np.cos(angle)
        qu = np.abs(u) - 180.0 * unit
        qv = np.abs(v) - 10.2 * unit
        outside = np.hypot(np.maximum(qu, 0.0), np.maximum(qv, 0.0))
        return outside + np.minimum(np.maximum(qu, qv), 0.0)

    raise ValueError(f"unknown shape '{shape}', expected one of {SHAPES}")


def _one_hot(gt: LabelMap) -> np.ndarray:
    return np.stack([(gt.data == k) for k in range(gt.num_labels)]).astype(np.float64)


def _corrupt_band(lowres: np.ndarray, band_error: float, rng: np.random.Generator) -> np.ndarray:
    argmax = LabelMap.from_array(np.argmax(lowres, axis=0).astype(np.uint8), lowres.shape[0])
    band = np.flatnonzero(boundary_mask(argmax).data)
    n_swap = int(round(band_error * band.size))
    chosen = rng.choice(band, size=n_swap, replace=False) if n_swap else np.empty(0, dtype=np.int64)

    out = lowres.reshape(2, -1).copy()
    out[:, chosen] = out[::-1][:, chosen]
    logger.debug(f"Swapped class probabilities on {n_swap}/{band.size} low-resolution band pixels")
    return out.reshape(lowres.shape)


def make_scene(shape: str = "disk", size: int = 512, lowres_size: int = 64, band_error: float = 0.15,
               edge_strength: float = 0.05, rng_seed: int = 0) -> Scene:
    if not 0.0 <= band_error <= 1.0:
        raise ValueError("band_error must lie in [0, 1]")
    if lowres_size > size:
        raise ValueError("lowres_size must not exceed size")

    d = _signed_distance(shape, size)
    gt = LabelMap.from_array((d < 0).astype(np.uint8), 2)

    coverage = np.clip(0.5 - d, 0.0, 1.0)[:, :, None]
    image = ImageRgb.from_array(coverage * OBJECT_RGB + (1.0 - coverage) * BACKGROUND_RGB)
    boundary = ProbMap.from_array((edge_strength * np.exp(-2.0 * d * d))[None])

    one_hot = ProbMap.from_array(_one_hot(gt))
    coarse = area_downsample_prob(one_hot, lowres_size, lowres_size).data.astype(np.float64)
    coarse = _corrupt_band(coarse, band_error, np.random.default_rng(rng_seed))
    lowres = ProbMap.from_array(coarse)

    logger.info(f"Built {shape} scene {size}x{size} with {lowres_size}x{lowres_size} estimate")
    return Scene(name=shape, image=image, gt=gt, boundary=boundary, lowres=lowres)


def colour_estimate(image: ImageRgb) -> ProbMap:
    """Stand-in low-resolution segmenter: each pixel's position between the background and object colours."""
    if image.channels != 3:
        raise ValueError("colour estimate needs an RGB image")
    axis = OBJECT_RGB - BACKGROUND_RGB
    weight = (np.asarray(image.data, dtype=np.float64) - BACKGROUND_RGB) @ axis / float(axis @ axis)
    obj = np.clip(weight, 0.0, 1.0)
    return ProbMap.from_array(np.stack([1.0 - obj, obj]))


def _bleed(probs: np.ndarray, rounds: int) -> np.ndarray:
    """Grow the object by `rounds` pixels: swap the classes of background pixels touching it."""
    out = probs.copy()
    for _ in range(rounds):
        argmax = LabelMap.from_array(np.argmax(out, axis=0).astype(np.uint8), 2)
        band = boundary_mask(argmax).data & (argmax.data == 0)
        out[:, band] = out[::-1][:, band]
    return out


def scale_estimates(scene: Scene, scales: Iterable[int], bleed: int = 1) -> Dict[int, ProbMap]:
    """Per-scale estimates from the image area-downsampled to each long-axis length.

    The object bleeds `bleed` low-resolution pixels into the background, so the
    error band widens at coarser scales.
    """
    if bleed < 0:
        raise ValueError("bleed must be non-negative")
    out = {}
    for scale in scales:
        w, h = long_axis_size(scene.image.width, scene.image.height,
                              min(int(scale), max(scene.image.width, scene.image.height)))
        small = area_downsample_image(scene.image, w, h)
        probs = colour_estimate(small).data.astype(np.float64)
        out[int(scale)] = ProbMap.from_array(_bleed(probs, bleed))
    return out


def write_scene(scene: Scene, root, scales: Iterable[int] = ()) -> Path:
    root = Path(root)
    for sub in ("images", "gt", "boundary", "lowres"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_image(scene.image, root / "images" / f"{scene.name}.png")
    save_labels(scene.gt, root / "gt" / f"{scene.name}.png")
    save_prb(scene.boundary, root / "boundary" / f"{scene.name}.prb")
    save_prb(scene.lowres, root / "lowres" / f"{scene.name}.prb")

    estimates = scale_estimates(scene, scales)
    if estimates:
        est_dir = root / "estimates" / scene.name
        est_dir.mkdir(parents=True, exist_ok=True)
        for scale, probs in estimates.items():
            save_prb(probs, est_dir / f"{scale}.prb")
    logger.info(f"Wrote scene '{scene.name}' to {root}")
    return root
