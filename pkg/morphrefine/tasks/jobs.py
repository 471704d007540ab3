"""
Job definitions shared by the command line and the job service.

Each job type has a pydantic parameter model and a runner returning a
JSON-serialisable dict. The CLI turns the same results into CSV files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Type

import pandas as pd
from pydantic import BaseModel, Field

from morphrefine.core import DEFAULT_PRESET, PipelineConfig
from morphrefine.dataset import load_records, match_pairs
from morphrefine.errors import PipelineError, RasterFormatError, ValidationFailed
from morphrefine.experiments import (
    noise_frame,
    noise_sweep,
    parallel_map,
    scale_sweep,
    seed_quality_sweep,
    upsampling_error_histogram,
)
from morphrefine.metrics import BoundaryHistogram, ConfusionCounts, boundary_error_histogram, confusion, iou_table
from morphrefine.pipeline import refine
from morphrefine.raster_io import load_image, load_labels, load_prb, save_edge_weights, save_labels, save_prb, save_seeds

logger = logging.getLogger(__name__)

SeedMode = Literal["estimated", "ground-truth"]


# ============================================================================
# Parameter models
# ============================================================================

class ConfigParams(BaseModel):
    """Preset plus optional per-field overrides."""

    preset: str = DEFAULT_PRESET
    t: Optional[float] = None
    n_thin: Optional[int] = None
    n_prun: Optional[int] = None
    beta: Optional[float] = None
    solver_tol: Optional[float] = None
    solver_max_iter: Optional[int] = None
    workers: Optional[int] = None

    def to_config(self) -> PipelineConfig:
        overrides = self.model_dump(exclude={"preset"})
        return PipelineConfig.from_preset(self.preset, **overrides)


class RefineParams(ConfigParams):
    image: str
    lowres: str
    boundary: Optional[str] = None
    out_labels: str
    out_probs: Optional[str] = None
    out_seeds: Optional[str] = None
    out_weights: Optional[str] = None


class EvaluateParams(BaseModel):
    pred: str
    gt: str
    num_labels: int = Field(ge=1, le=255)
    jobs: int = Field(1, ge=1)


class DatasetParams(ConfigParams):
    data: str
    num_labels: int = Field(ge=1, le=255)
    jobs: int = Field(1, ge=1)


class SeedQualityParams(DatasetParams):
    n_thin_values: List[int] = Field(default_factory=lambda: [20, 40, 60, 80, 100])
    n_prun_values: List[int] = Field(default_factory=lambda: [20])
    seed_mode: SeedMode = "ground-truth"


class NoiseSweepParams(DatasetParams):
    sigma2: List[float] = Field(default_factory=lambda: [0.02, 0.1, 0.5, 1.0])
    trials: int = Field(50, ge=1)
    seed_mode: SeedMode = "estimated"
    rng_seed: int = Field(0, ge=0)


class ScaleSweepParams(DatasetParams):
    scales: List[int] = Field(default_factory=lambda: [32, 64, 128, 150, 256, 512])


class BoundaryHistParams(BaseModel):
    data: str
    num_labels: int = Field(ge=1, le=255)
    jobs: int = Field(1, ge=1)


# ============================================================================
# Runners
# ============================================================================

def run_refine(params: RefineParams) -> Dict[str, Any]:
    config = params.to_config()
    image = load_image(params.image)
    lowres = load_prb(params.lowres)
    boundary = load_prb(params.boundary) if params.boundary else None

    result = refine(image, lowres, boundary, config)
    save_labels(result.labels, params.out_labels)
    if params.out_probs:
        save_prb(result.solution.probs, params.out_probs)
    if params.out_seeds:
        save_seeds(result.seeds, params.out_seeds)
    if params.out_weights:
        save_edge_weights(result.weights, params.out_weights)
    return {
        "labels": params.out_labels,
        "seeds": len(result.seeds),
        "iterations": list(result.solution.iterations),
        "residuals": list(result.solution.residuals),
        "converged": result.solution.all_converged,
    }


@dataclass
class EvaluationOutcome:
    counts: ConfusionCounts
    histogram: BoundaryHistogram
    evaluated: List[str]
    skipped: List[str]


def _evaluate_pair(task: Tuple[Tuple[str, str, str], int, bool]):
    (name, pred_path, gt_path), num_labels, with_histogram = task
    try:
        pred = load_labels(pred_path, num_labels)
        gt = load_labels(gt_path, num_labels)
        counts = confusion(pred, gt)
        hist = None
        if with_histogram:
            try:
                hist = boundary_error_histogram(pred, gt)
            except PipelineError:
                hist = BoundaryHistogram.empty()
        return name, counts, hist, None
    except (ValidationFailed, RasterFormatError) as e:
        return name, None, None, e.message


def evaluate_pairs(pred, gt, num_labels: int, jobs: int = 1, with_histogram: bool = False) -> EvaluationOutcome:
    """Pool confusion counts over every matched (pred, gt) pair; failing pairs are skipped."""
    pairs = [(name, str(p), str(g)) for name, p, g in match_pairs(pred, gt)]
    results = parallel_map(_evaluate_pair, [(pair, num_labels, with_histogram) for pair in pairs], jobs)

    counts = ConfusionCounts.zeros(num_labels)
    histogram = BoundaryHistogram.empty()
    evaluated, skipped = [], []
    for name, c, hist, error in results:
        if error is not None:
            logger.warning(f"Skipping '{name}': {error}")
            skipped.append(name)
            continue
        counts = counts + c
        if hist is not None:
            histogram = histogram + hist
        evaluated.append(name)

    if not evaluated:
        raise PipelineError(f"all {len(pairs)} pairs failed to evaluate")
    logger.info(f"Evaluated {len(evaluated)} pairs, skipped {len(skipped)}")
    return EvaluationOutcome(counts, histogram, evaluated, skipped)


def run_evaluate(params: EvaluateParams) -> Dict[str, Any]:
    outcome = evaluate_pairs(params.pred, params.gt, params.num_labels, params.jobs)
    table = iou_table(outcome.counts)
    return {
        "overall_iou": float(table["iou"].iloc[-1]),
        "per_label": _records(table),
        "evaluated": outcome.evaluated,
        "skipped": outcome.skipped,
    }


def _scenes(params, require):
    return [record.load() for record in load_records(params.data, params.num_labels, require=require)]


def seed_quality_table(params: SeedQualityParams) -> pd.DataFrame:
    require = ("gt",) if params.seed_mode == "ground-truth" else ("gt", "lowres")
    config = params.to_config()
    return seed_quality_sweep(_scenes(params, require), params.n_thin_values, params.n_prun_values,
                              seed_mode=params.seed_mode, t=config.t, jobs=params.jobs)


def noise_table(params: NoiseSweepParams) -> pd.DataFrame:
    require = ("images", "gt") if params.seed_mode == "ground-truth" else ("images", "gt", "lowres")
    reports = noise_sweep(_scenes(params, require), params.sigma2, trials=params.trials,
                          seed_mode=params.seed_mode, config=params.to_config(), rng_seed=params.rng_seed,
                          jobs=params.jobs)
    return noise_frame(reports)


def scale_table(params: ScaleSweepParams, configs: Optional[List[PipelineConfig]] = None) -> pd.DataFrame:
    records = load_records(params.data, params.num_labels, require=("images", "gt"))
    scenes, estimates = [], {}
    for record in records:
        scenes.append(record.load())
        estimates[record.name] = {scale: record.load_estimate(scale) for scale in params.scales}
    return scale_sweep(scenes, estimates, params.scales, configs or [params.to_config()], jobs=params.jobs)


def histogram_table(params: BoundaryHistParams) -> pd.DataFrame:
    records = load_records(params.data, params.num_labels, require=("gt", "lowres"))
    return upsampling_error_histogram([record.load() for record in records], jobs=params.jobs).to_frame()


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return json.loads(frame.to_json(orient="records"))


@dataclass(frozen=True)
class JobType:
    name: str
    description: str
    params: Type[BaseModel]
    run: Callable[[Any], Dict[str, Any]]


JOB_TYPES: Dict[str, JobType] = {
    job.name: job for job in (
        JobType("refine", "Refine one image from its low-resolution estimate", RefineParams, run_refine),
        JobType("evaluate", "Overall and per-label IoU of predicted label maps", EvaluateParams, run_evaluate),
        JobType("seed-quality", "Seed coverage and false positives over thinning/pruning counts",
                SeedQualityParams, lambda p: {"rows": _records(seed_quality_table(p))}),
        JobType("noise-sweep", "Robustness to Gaussian noise in the boundary probability",
                NoiseSweepParams, lambda p: {"rows": _records(noise_table(p))}),
        JobType("scale-sweep", "Overall IoU per low-resolution scale", ScaleSweepParams,
                lambda p: {"rows": _records(scale_table(p))}),
        JobType("boundary-hist", "Upsampling error frequency vs distance to the boundary",
                BoundaryHistParams, lambda p: {"rows": _records(histogram_table(p))}),
    )
}


def run_job(job_type: str, parameters: Dict[str, Any]) -> Dict[str, Any]:
    job = JOB_TYPES[job_type]
    return job.run(job.params(**parameters))
