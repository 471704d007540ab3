"""
Dataset directory layout used by the batch commands:

    <root>/images/<name>.png
    <root>/gt/<name>.png
    <root>/boundary/<name>.prb
    <root>/lowres/<name>.prb
    <root>/estimates/<name>/<scale>.prb
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from morphrefine.core import ImageRgb, LabelMap, ProbMap
from morphrefine.errors import PipelineError, RasterFormatError, UsageError
from morphrefine.raster_io import load_image, load_labels, load_prb

logger = logging.getLogger(__name__)

PARTS = ("images", "gt", "boundary", "lowres")


@dataclass(frozen=True)
class Scene:
    """In-memory inputs of one image; parts absent on disk are None."""

    name: str
    image: Optional[ImageRgb] = None
    gt: Optional[LabelMap] = None
    boundary: Optional[ProbMap] = None
    lowres: Optional[ProbMap] = None


@dataclass
class SceneRecord:
    name: str
    num_labels: int
    image: Optional[Path] = None
    gt: Optional[Path] = None
    boundary: Optional[Path] = None
    lowres: Optional[Path] = None
    estimates: Dict[int, Path] = field(default_factory=dict)

    def load_image(self) -> ImageRgb:
        return load_image(self._need("image"))

    def load_gt(self) -> LabelMap:
        return load_labels(self._need("gt"), self.num_labels)

    def load_boundary(self) -> Optional[ProbMap]:
        return load_prb(self.boundary) if self.boundary else None

    def load_lowres(self) -> ProbMap:
        return load_prb(self._need("lowres"))

    def load_estimate(self, scale: int) -> ProbMap:
        if scale not in self.estimates:
            raise PipelineError(f"missing estimate for '{self.name}' at scale {scale}",
                                suggestion=f"expected estimates/{self.name}/{scale}.prb")
        return load_prb(self.estimates[scale])

    def load(self) -> Scene:
        return Scene(
            name=self.name,
            image=self.load_image() if self.image else None,
            gt=self.load_gt() if self.gt else None,
            boundary=self.load_boundary(),
            lowres=load_prb(self.lowres) if self.lowres else None,
        )

    def _need(self, part: str) -> Path:
        path = getattr(self, part)
        if path is None:
            raise PipelineError(f"record '{self.name}' has no {part} file")
        return path


def _part_path(root: Path, part: str, name: str) -> Optional[Path]:
    suffix = ".png" if part in ("images", "gt") else ".prb"
    path = root / part / f"{name}{suffix}"
    return path if path.is_file() else None


def load_records(root, num_labels: int, require: Iterable[str] = ("images", "gt")) -> List[SceneRecord]:
    """Index the scenes under `root` by image name; files are read lazily."""
    root = Path(root)
    require = tuple(require)
    anchor = "images" if (root / "images").is_dir() else "gt"
    if not (root / anchor).is_dir():
        raise RasterFormatError(root, "unreadable", "neither images/ nor gt/ exists")

    names = sorted(p.stem for p in (root / anchor).glob("*.png"))
    if not names:
        raise PipelineError(f"no scenes found under {root / anchor}")

    records = []
    for name in names:
        record = SceneRecord(
            name=name,
            num_labels=num_labels,
            image=_part_path(root, "images", name),
            gt=_part_path(root, "gt", name),
            boundary=_part_path(root, "boundary", name),
            lowres=_part_path(root, "lowres", name),
        )
        est_dir = root / "estimates" / name
        if est_dir.is_dir():
            for path in est_dir.glob("*.prb"):
                if path.stem.isdigit():
                    record.estimates[int(path.stem)] = path

        missing = [part for part in require
                   if part in PARTS and getattr(record, "image" if part == "images" else part) is None]
        if missing:
            raise PipelineError(f"scene '{name}' is missing {', '.join(missing)}", details=str(root))
        records.append(record)

    logger.info(f"Indexed {len(records)} scenes under {root}")
    return records


def match_pairs(pred, gt) -> List[Tuple[str, Path, Path]]:
    """Pair prediction and ground-truth PNGs by filename; accepts two files or two directories."""
    pred, gt = Path(pred), Path(gt)
    if pred.is_file() and gt.is_file():
        return [(pred.stem, pred, gt)]
    if pred.is_dir() and gt.is_dir():
        pred_files = {p.name: p for p in pred.glob("*.png")}
        gt_files = {p.name: p for p in gt.glob("*.png")}
        common = sorted(pred_files.keys() & gt_files.keys())
        if not common:
            raise UsageError(f"no matching filenames between {pred} and {gt}")
        unmatched = len(pred_files) + len(gt_files) - 2 * len(common)
        if unmatched:
            logger.warning(f"{unmatched} files have no counterpart and are ignored")
        return [(Path(name).stem, pred_files[name], gt_files[name]) for name in common]
    if not pred.exists() or not gt.exists():
        missing = pred if not pred.exists() else gt
        raise RasterFormatError(missing, "unreadable", "no such file or directory")
    raise UsageError("--pred and --gt must both be files or both be directories")
