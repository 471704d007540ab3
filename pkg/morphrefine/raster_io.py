"""
File formats for images, label maps and probability maps.

PNG goes through pypng. PRB1 is a 16-byte little-endian header
(magic "PRB1", width, height, channels as uint32) followed by `channels`
planar height x width float32 planes, also little-endian.
"""

from __future__ import annotations

import logging
import os
import struct
from pathlib import Path
from typing import Union

import numpy as np
import png

from morphrefine.core import UNLABELED, EdgeWeightGrid, ImageRgb, LabelMap, ProbMap, SeedSet
from morphrefine.errors import RasterFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

PRB_MAGIC = b"PRB1"
PRB_HEADER = struct.Struct("<4sIII")
PRB_DTYPE = np.dtype("<f4")


# ── PNG ──────────────────────────────────────────────────────────────────────

def _read_png(path: PathLike):
    try:
        reader = png.Reader(filename=str(path))
        width, height, rows, info = reader.read()
    except (OSError, png.Error) as e:
        raise RasterFormatError(path, "unreadable", str(e)) from e

    if info.get("palette") is not None:
        raise RasterFormatError(path, "unsupported", "palette PNG")
    if info.get("interlace"):
        raise RasterFormatError(path, "unsupported", "interlaced PNG")
    if info.get("alpha"):
        raise RasterFormatError(path, "unsupported", "alpha channel")
    if info["bitdepth"] not in (8, 16):
        raise RasterFormatError(path, "unsupported", f"bit depth {info['bitdepth']}")

    planes = info["planes"]
    try:
        dtype = np.uint8 if info["bitdepth"] == 8 else np.uint16
        pixels = np.vstack([np.asarray(row, dtype=dtype) for row in rows])
    except png.Error as e:
        raise RasterFormatError(path, "unreadable", str(e)) from e
    return pixels.reshape(height, width, planes), info


def load_image(path: PathLike) -> ImageRgb:
    """Read an 8/16-bit grayscale or RGB PNG, scaling intensities to [0, 1]."""
    pixels, info = _read_png(path)
    scale = float(2 ** info["bitdepth"] - 1)
    image = ImageRgb.from_array(pixels.astype(np.float32) / np.float32(scale))
    logger.debug(f"Loaded image {path}: {image.width}x{image.height}x{image.channels}")
    return image


def save_image(image: ImageRgb, path: PathLike) -> None:
    """Write an image as 8-bit PNG (quantized)."""
    data = np.clip(np.rint(np.asarray(image.data, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    writer = png.Writer(width=image.width, height=image.height,
                        greyscale=image.channels == 1, bitdepth=8)
    with open(path, "wb") as f:
        writer.write(f, data.reshape(image.height, image.width * image.channels))


def load_labels(path: PathLike, num_labels: int) -> LabelMap:
    pixels, info = _read_png(path)
    if info["planes"] != 1 or info["bitdepth"] != 8:
        raise RasterFormatError(path, "unsupported", "label maps must be 8-bit grayscale")
    data = pixels[:, :, 0]
    bad = (data >= num_labels) & (data != UNLABELED)
    if bad.any():
        raise RasterFormatError(path, "invalid-label",
                                f"{int(bad.sum())} pixels outside [0, {num_labels}) and not {UNLABELED}")
    return LabelMap.from_array(data, num_labels)


def save_labels(labels: LabelMap, path: PathLike) -> None:
    writer = png.Writer(width=labels.width, height=labels.height, greyscale=True, bitdepth=8)
    with open(path, "wb") as f:
        writer.write(f, np.ascontiguousarray(labels.data))


def save_seeds(seeds: SeedSet, path: PathLike) -> None:
    """Seed pixels keep their label, every other pixel is UNLABELED."""
    save_labels(seeds.to_label_map(), path)


# ── PRB1 ─────────────────────────────────────────────────────────────────────

def load_prb(path: PathLike) -> ProbMap:
    try:
        size = os.path.getsize(path)
        with open(path, "rb") as f:
            header = f.read(PRB_HEADER.size)
            if len(header) < PRB_HEADER.size:
                raise RasterFormatError(path, "truncated", f"{len(header)}-byte header")
            magic, width, height, channels = PRB_HEADER.unpack(header)
            if magic != PRB_MAGIC:
                raise RasterFormatError(path, "bad-magic", repr(magic))
            if min(width, height, channels) < 1:
                raise RasterFormatError(path, "unsupported", "zero dimension in header")

            # check length before allocating anything header-sized
            expected = PRB_HEADER.size + PRB_DTYPE.itemsize * width * height * channels
            if size < expected:
                raise RasterFormatError(path, "truncated", f"expected {expected} bytes, found {size}")
            if size > expected:
                raise RasterFormatError(path, "trailing-bytes", f"expected {expected} bytes, found {size}")
            payload = f.read()
    except OSError as e:
        raise RasterFormatError(path, "unreadable", str(e)) from e

    data = np.frombuffer(payload, dtype=PRB_DTYPE).reshape(channels, height, width)
    probs = ProbMap.from_array(data.astype(np.float32))
    logger.debug(f"Loaded PRB1 {path}: {width}x{height}x{channels}")
    return probs


def save_prb(probs: ProbMap, path: PathLike) -> None:
    header = PRB_HEADER.pack(PRB_MAGIC, probs.width, probs.height, probs.channels)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(probs.data, dtype=PRB_DTYPE).tobytes())


def save_edge_weights(weights: EdgeWeightGrid, stem: PathLike) -> tuple:
    """Export the grid as `<stem>_h.prb` and `<stem>_v.prb` for inspection."""
    stem = Path(stem)
    h_path = stem.with_name(f"{stem.name}_h.prb")
    v_path = stem.with_name(f"{stem.name}_v.prb")
    save_prb(ProbMap.from_array(weights.horizontal[None]), h_path)
    save_prb(ProbMap.from_array(weights.vertical[None]), v_path)
    return h_path, v_path
