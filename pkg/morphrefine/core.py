"""
Domain types shared by every stage of the refinement pipeline.

All arrays are numpy arrays in row-major (height, width) order:

    ImageRgb.data        (H, W, C)  float32 in [0, 1], C in {1, 3}
    LabelMap.data        (H, W)     uint8, label index or UNLABELED
    ProbMap.data         (K, H, W)  float32 planes, finite and >= 0
    BinaryMask.data      (H, W)     bool
    EdgeWeightGrid       horizontal (H, W-1), vertical (H-1, W), float64
    SeedSet              sorted unique pixel offsets (r * W + c) and labels

Instances are frozen and their arrays are read-only views, so they can be
shared between threads. Constructors coerce dtypes; `validate` checks every
invariant and raises `ValidationFailed` naming the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from morphrefine.errors import ValidationFailed

UNLABELED = 255
MAX_LABELS = 255
WEIGHT_FLOOR = 1e-8
NORMALIZED_TOL = 1e-4


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


def _check_shape(name: str, arr: np.ndarray, expected: tuple) -> None:
    if arr.shape != expected:
        raise ValidationFailed(name, "dimension-mismatch", f"expected shape {expected}, got {arr.shape}")


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationFailed(name, "non-finite")


# ============================================================================
# Raster types
# ============================================================================

@dataclass(frozen=True)
class ImageRgb:
    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(np.asarray(self.data, dtype=np.float32)))

    @classmethod
    def from_array(cls, arr) -> "ImageRgb":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        image = cls(width=arr.shape[1], height=arr.shape[0], channels=arr.shape[2], data=arr)
        image.validate()
        return image

    def validate(self) -> None:
        if self.channels not in (1, 3):
            raise ValidationFailed("channels", "out-of-range", f"channels must be 1 or 3, got {self.channels}")
        _check_shape("data", self.data, (self.height, self.width, self.channels))
        _check_finite("data", self.data)
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValidationFailed("data", "out-of-range", "intensities must lie in [0, 1]")

    def luminance(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[:, :, 0].astype(np.float64)
        rgb = self.data.astype(np.float64)
        return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


@dataclass(frozen=True)
class LabelMap:
    width: int
    height: int
    num_labels: int
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > UNLABELED):
                raise ValidationFailed("data", "out-of-range", "label values must fit in one byte")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", _readonly(arr))

    @classmethod
    def from_array(cls, arr, num_labels: int) -> "LabelMap":
        arr = np.asarray(arr)
        labels = cls(width=arr.shape[1], height=arr.shape[0], num_labels=num_labels, data=arr)
        labels.validate()
        return labels

    def validate(self) -> None:
        if not 1 <= self.num_labels <= MAX_LABELS:
            raise ValidationFailed("num_labels", "out-of-range", f"num_labels must be in [1, {MAX_LABELS}]")
        _check_shape("data", self.data, (self.height, self.width))
        bad = (self.data >= self.num_labels) & (self.data != UNLABELED)
        if bad.any():
            raise ValidationFailed("data", "out-of-range", f"{int(bad.sum())} pixels carry a label >= {self.num_labels}")

    @property
    def labeled(self) -> np.ndarray:
        return self.data != UNLABELED

    def present_labels(self) -> np.ndarray:
        values = np.unique(self.data)
        return values[values != UNLABELED]


@dataclass(frozen=True)
class ProbMap:
    width: int
    height: int
    channels: int
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(np.asarray(self.data, dtype=np.float32)))

    @classmethod
    def from_array(cls, arr, normalized: bool = False) -> "ProbMap":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        probs = cls(width=arr.shape[2], height=arr.shape[1], channels=arr.shape[0], data=arr, normalized=normalized)
        probs.validate()
        return probs

    def validate(self) -> None:
        if self.channels < 1:
            raise ValidationFailed("channels", "out-of-range")
        _check_shape("data", self.data, (self.channels, self.height, self.width))
        _check_finite("data", self.data)
        if self.data.size and self.data.min() < 0.0:
            raise ValidationFailed("data", "out-of-range", "probabilities must be non-negative")
        if self.normalized:
            sums = self.data.astype(np.float64).sum(axis=0)
            if np.any(np.abs(sums - 1.0) > NORMALIZED_TOL):
                raise ValidationFailed("data", "out-of-range", "channel sums deviate from 1 on a normalized map")

    def plane(self, k: int = 0) -> np.ndarray:
        return self.data[k]


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(np.asarray(self.data, dtype=bool)))

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr, dtype=bool)
        mask = cls(width=arr.shape[1], height=arr.shape[0], data=arr)
        mask.validate()
        return mask

    def validate(self) -> None:
        _check_shape("data", self.data, (self.height, self.width))

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class EdgeWeightGrid:
    """Weights of the 4-adjacency grid graph.

    horizontal[r, c] joins (r, c) and (r, c + 1); vertical[r, c] joins (r, c) and (r + 1, c).
    """

    width: int
    height: int
    horizontal: np.ndarray
    vertical: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "horizontal", _readonly(np.asarray(self.horizontal, dtype=np.float64)))
        object.__setattr__(self, "vertical", _readonly(np.asarray(self.vertical, dtype=np.float64)))

    @classmethod
    def from_arrays(cls, horizontal, vertical, floor: bool = True) -> "EdgeWeightGrid":
        horizontal = np.asarray(horizontal, dtype=np.float64)
        vertical = np.asarray(vertical, dtype=np.float64)
        if floor:
            horizontal = np.maximum(horizontal, WEIGHT_FLOOR)
            vertical = np.maximum(vertical, WEIGHT_FLOOR)
        grid = cls(width=horizontal.shape[1] + 1, height=horizontal.shape[0],
                   horizontal=horizontal, vertical=vertical)
        grid.validate()
        return grid

    @classmethod
    def uniform(cls, width: int, height: int, value: float = 1.0) -> "EdgeWeightGrid":
        return cls.from_arrays(np.full((height, width - 1), value), np.full((height - 1, width), value))

    def validate(self) -> None:
        _check_shape("horizontal", self.horizontal, (self.height, self.width - 1))
        _check_shape("vertical", self.vertical, (self.height - 1, self.width))
        for name, arr in (("horizontal", self.horizontal), ("vertical", self.vertical)):
            _check_finite(name, arr)
            if arr.size and arr.min() < WEIGHT_FLOOR:
                raise ValidationFailed(name, "out-of-range", f"weights must be >= {WEIGHT_FLOOR}")

    def degree(self) -> np.ndarray:
        deg = np.zeros((self.height, self.width), dtype=np.float64)
        deg[:, :-1] += self.horizontal
        deg[:, 1:] += self.horizontal
        deg[:-1, :] += self.vertical
        deg[1:, :] += self.vertical
        return deg

    def scaled(self, factor: float) -> "EdgeWeightGrid":
        return EdgeWeightGrid.from_arrays(self.horizontal * factor, self.vertical * factor, floor=False)


@dataclass(frozen=True)
class SeedSet:
    """Hard label assignments used as Dirichlet boundary conditions."""

    width: int
    height: int
    num_labels: int
    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _readonly(np.asarray(self.pixels, dtype=np.int64).ravel()))
        object.__setattr__(self, "labels", _readonly(np.asarray(self.labels, dtype=np.uint8).ravel()))

    @classmethod
    def from_entries(cls, width: int, height: int, num_labels: int, pixels, labels) -> "SeedSet":
        pixels = np.asarray(pixels, dtype=np.int64).ravel()
        labels = np.asarray(labels, dtype=np.int64).ravel()
        if labels.size and (labels.min() < 0 or labels.max() > UNLABELED):
            raise ValidationFailed("labels", "out-of-range")
        order = np.argsort(pixels, kind="stable")
        seeds = cls(width, height, num_labels, pixels[order], labels[order])
        seeds.validate()
        return seeds

    @classmethod
    def from_label_map(cls, labels: LabelMap) -> "SeedSet":
        flat = labels.data.ravel()
        pixels = np.flatnonzero(flat != UNLABELED)
        return cls.from_entries(labels.width, labels.height, labels.num_labels, pixels, flat[pixels])

    def validate(self) -> None:
        if not 1 <= self.num_labels <= MAX_LABELS:
            raise ValidationFailed("num_labels", "out-of-range")
        if self.pixels.shape != self.labels.shape:
            raise ValidationFailed("entries", "dimension-mismatch", "pixels and labels differ in length")
        if self.pixels.size:
            if self.pixels.min() < 0 or self.pixels.max() >= self.width * self.height:
                raise ValidationFailed("pixels", "out-of-range", "pixel index outside the grid")
            if np.unique(self.pixels).size != self.pixels.size:
                raise ValidationFailed("pixels", "out-of-range", "duplicate pixel index")
            if self.labels.max() >= self.num_labels:
                raise ValidationFailed("labels", "out-of-range", f"label >= {self.num_labels}")

    def __len__(self) -> int:
        return int(self.pixels.size)

    @property
    def is_empty(self) -> bool:
        return self.pixels.size == 0

    def mask(self) -> np.ndarray:
        out = np.zeros(self.width * self.height, dtype=bool)
        out[self.pixels] = True
        return out.reshape(self.height, self.width)

    def to_label_map(self) -> LabelMap:
        flat = np.full(self.width * self.height, UNLABELED, dtype=np.uint8)
        flat[self.pixels] = self.labels
        return LabelMap(self.width, self.height, self.num_labels, flat.reshape(self.height, self.width))

    def distinct_labels(self) -> np.ndarray:
        return np.unique(self.labels)


# ============================================================================
# Configuration
# ============================================================================

class PipelineConfig(BaseModel):
    """Hyperparameters of the refinement pipeline; defaults match the big-deeplabv3plus preset."""

    t: float = Field(0.03, ge=0.0, le=1.0, description="top-2 margin threshold")
    n_thin: int = Field(35, ge=0)
    n_prun: int = Field(20, ge=0)
    beta: float = Field(11.3, gt=0.0)
    solver_tol: float = Field(1e-6, gt=0.0)
    solver_max_iter: int = Field(2000, ge=1)
    workers: Optional[int] = Field(None, ge=1,
                                   description="threads for the per-class solves; unset means one per class up to the CPU count")

    @classmethod
    def create(cls, **values: Any) -> "PipelineConfig":
        try:
            return cls(**values)
        except ValidationError as e:
            first = e.errors()[0]
            name = ".".join(str(part) for part in first["loc"]) or "config"
            raise ValidationFailed(name, "out-of-range", first["msg"]) from e

    @classmethod
    def from_preset(cls, name: str, **overrides: Any) -> "PipelineConfig":
        if name not in PRESETS:
            raise ValidationFailed("preset", "out-of-range", f"unknown preset '{name}', available: {sorted(PRESETS)}")
        values = dict(PRESETS[name])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.create(**values)

    def validate(self) -> None:
        PipelineConfig.create(**self.model_dump())


PRESETS: Dict[str, Dict[str, Any]] = {
    "big-deeplabv3plus": {"t": 0.03, "n_thin": 35, "n_prun": 20, "beta": 11.3},
    "big-fcn8": {"t": 0.4, "n_thin": 85, "n_prun": 10, "beta": 10.8},
    "pascal-deeplabv3plus": {"t": 0.4, "n_thin": 0, "n_prun": 0, "beta": 10.5},
    "pascal-fcn8": {"t": 0.95, "n_thin": 0, "n_prun": 0, "beta": 10.9},
}
DEFAULT_PRESET = "big-deeplabv3plus"


CoreValue = Union[ImageRgb, LabelMap, ProbMap, BinaryMask, EdgeWeightGrid, SeedSet, PipelineConfig]


def validate(value: CoreValue) -> None:
    """Check every invariant of a core value; raises ValidationFailed on the first violation."""
    if not isinstance(value, (ImageRgb, LabelMap, ProbMap, BinaryMask, EdgeWeightGrid, SeedSet, PipelineConfig)):
        raise TypeError(f"not a core type: {type(value).__name__}")
    value.validate()


def same_grid(a, b, what: Optional[str] = None) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise ValidationFailed(what or "data", "dimension-mismatch",
                               f"{a.width}x{a.height} vs {b.width}x{b.height}")
