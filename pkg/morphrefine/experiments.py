"""
Robustness and limitation studies built on the refinement pipeline:

  - noise_sweep: Gaussian perturbation of the boundary-probability map
  - seed_quality_sweep: seed coverage / false positives over (n_thin, n_prun)
  - scale_sweep: best overall IoU per low-resolution scale
  - upsampling_error_histogram: error frequency vs L1 distance to the boundary
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from morphrefine.core import LabelMap, PipelineConfig, ProbMap, SeedSet
from morphrefine.dataset import Scene
from morphrefine.errors import PipelineError, ValidationFailed
from morphrefine.metrics import (
    BoundaryHistogram,
    ConfusionCounts,
    boundary_error_histogram,
    confusion,
    overall_iou,
    seed_quality,
)
from morphrefine.pipeline import refine, refine_with_seeds
from morphrefine.resample import bicubic_upsample_prob, nn_upsample_labels
from morphrefine.seeding import potential_seeds, seeds_from_ground_truth, select_seeds
from morphrefine.weights import fallback_boundary_prob

logger = logging.getLogger(__name__)

SEED_MODES = ("estimated", "ground-truth")


# ============================================================================
# Noise perturbation
# ============================================================================

def noise_generator(rng_seed: int, trial: int = 0, stream: int = 0) -> np.random.Generator:
    """Philox stream keyed by (rng_seed, trial); `stream` jumps to an independent substream."""
    key = np.array([rng_seed, trial], dtype=np.uint64)
    bit_generator = np.random.Philox(key=key)
    if stream:
        bit_generator = bit_generator.jumped(stream)
    return np.random.Generator(bit_generator)


def gaussian_noise(gen: np.random.Generator, n: int) -> np.ndarray:
    """Standard normals by Box-Muller on the generator's uniform doubles."""
    u1 = 1.0 - gen.random(n)  # (0, 1]
    u2 = gen.random(n)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def perturb_boundary_prob(p: ProbMap, sigma2: float, rng_seed: int, trial: int = 0, stream: int = 0) -> ProbMap:
    if sigma2 < 0:
        raise ValidationFailed("sigma2", "out-of-range", f"noise variance must be >= 0, got {sigma2}")
    if p.channels != 1:
        raise ValidationFailed("channels", "out-of-range", "boundary probability must have one channel")
    if sigma2 == 0:
        return p
    plane = p.data[0].astype(np.float64)
    noise = gaussian_noise(noise_generator(rng_seed, trial, stream), plane.size).reshape(plane.shape)
    return ProbMap.from_array(np.clip(plane + np.sqrt(sigma2) * noise, 0.0, 1.0)[None])


@dataclass(frozen=True)
class NoiseTrialReport:
    sigma2: float
    iou_all: float
    iou_nonseed: float
    rel_shift: float
    trials: int


def _scene_seeds(scene: Scene, seed_mode: str, config: PipelineConfig) -> SeedSet:
    if seed_mode == "ground-truth":
        if scene.gt is None:
            raise PipelineError(f"scene '{scene.name}' has no ground truth")
        return seeds_from_ground_truth(scene.gt, config.n_thin, config.n_prun)
    if seed_mode == "estimated":
        if scene.lowres is None or scene.image is None:
            raise PipelineError(f"scene '{scene.name}' needs an image and a low-resolution estimate")
        upsampled = bicubic_upsample_prob(scene.lowres, scene.image.width, scene.image.height)
        return select_seeds(potential_seeds(upsampled, config.t), config.n_thin, config.n_prun)
    raise ValidationFailed("seed_mode", "out-of-range", f"expected one of {SEED_MODES}, got '{seed_mode}'")


def _scene_boundary(scene: Scene) -> ProbMap:
    if scene.boundary is not None:
        return scene.boundary
    if scene.image is None:
        raise PipelineError(f"scene '{scene.name}' has neither a boundary map nor an image")
    return fallback_boundary_prob(scene.image)


def _iou_percent(counts: ConfusionCounts) -> float:
    """Overall IoU in percent; NaN when every evaluated pixel was a seed."""
    if int((counts.tp + counts.fp + counts.fn).sum()) == 0:
        return float("nan")
    return 100.0 * overall_iou(counts)


def parallel_map(fn: Callable[[Any], Any], tasks: Sequence[Any], jobs: int = 1) -> List[Any]:
    """`fn` over `tasks` in order, on `jobs` worker processes when there is more than one."""
    if jobs < 1:
        raise ValidationFailed("jobs", "out-of-range", f"jobs must be >= 1, got {jobs}")
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(task) for task in tasks]


@dataclass(frozen=True)
class _NoiseScene:
    gt: LabelMap
    seeds: SeedSet
    boundary: ProbMap
    base: np.ndarray


def _prepare_noise_scene(task: Tuple[Scene, str, PipelineConfig]) -> _NoiseScene:
    scene, seed_mode, config = task
    if scene.gt is None:
        raise PipelineError(f"scene '{scene.name}' has no ground truth")
    seeds = _scene_seeds(scene, seed_mode, config)
    boundary = _scene_boundary(scene)
    baseline, _ = refine_with_seeds(boundary, seeds, config, scene.gt.num_labels)
    return _NoiseScene(scene.gt, seeds, boundary, baseline.probs.data.astype(np.float64))


def _noise_trial(task: Tuple[_NoiseScene, float, int, int, int, PipelineConfig]):
    """Confusion counts and squared norms of one perturbed solve."""
    prepared, sigma2, rng_seed, trial, stream, config = task
    noisy = perturb_boundary_prob(prepared.boundary, sigma2, rng_seed, trial, stream=stream)
    solution, labels = refine_with_seeds(noisy, prepared.seeds, config, prepared.gt.num_labels)
    all_c = confusion(labels, prepared.gt)
    free_c = confusion(labels, prepared.gt, restrict=~prepared.seeds.mask())
    delta_sq = float(np.sum((solution.probs.data.astype(np.float64) - prepared.base) ** 2))
    return all_c, free_c, delta_sq, float(np.sum(prepared.base ** 2))


def noise_sweep(scenes: Sequence[Scene], sigma2_values: Sequence[float], trials: int = 1,
                seed_mode: str = "ground-truth", config: Optional[PipelineConfig] = None,
                rng_seed: int = 0, jobs: int = 1) -> List[NoiseTrialReport]:
    """Solve with perturbed boundary maps and compare against the unperturbed solve.

    Confusion counts and norms are pooled over all scenes within a trial, then
    averaged over trials. With `jobs` > 1 the solves run on worker processes;
    the pooled numbers do not depend on it.
    """
    config = config or PipelineConfig()
    if trials < 1:
        raise ValidationFailed("trials", "out-of-range")
    if not scenes:
        raise PipelineError("noise sweep needs at least one scene")

    prepared = parallel_map(_prepare_noise_scene, [(scene, seed_mode, config) for scene in scenes], jobs)
    tasks = [(p, float(sigma2), rng_seed, trial, index, config)
             for sigma2 in sigma2_values for trial in range(trials) for index, p in enumerate(prepared)]
    outcomes = iter(parallel_map(_noise_trial, tasks, jobs))

    reports = []
    for sigma2 in sigma2_values:
        iou_all, iou_nonseed, shifts = [], [], []
        for trial in range(trials):
            counts_all: Optional[ConfusionCounts] = None
            counts_free: Optional[ConfusionCounts] = None
            delta_sq = base_sq = 0.0
            for _ in prepared:
                all_c, free_c, scene_delta, scene_base = next(outcomes)
                counts_all = all_c if counts_all is None else counts_all + all_c
                counts_free = free_c if counts_free is None else counts_free + free_c
                delta_sq += scene_delta
                base_sq += scene_base

            iou_all.append(100.0 * overall_iou(counts_all))
            iou_nonseed.append(_iou_percent(counts_free))
            shifts.append(np.sqrt(delta_sq) / np.sqrt(base_sq))

        report = NoiseTrialReport(float(sigma2), float(np.mean(iou_all)), float(np.mean(iou_nonseed)),
                                  float(np.mean(shifts)), trials)
        logger.info(f"Noise sigma2={sigma2}: IoU all {report.iou_all:.2f}, "
                    f"non-seed {report.iou_nonseed:.2f}, shift {report.rel_shift:.4f}")
        reports.append(report)
    return reports


def noise_frame(reports: Sequence[NoiseTrialReport]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in reports],
                        columns=["sigma2", "iou_all", "iou_nonseed", "rel_shift", "trials"])


# ============================================================================
# Seed quality
# ============================================================================

def _seed_quality_point(task: Tuple[List[Tuple[LabelMap, LabelMap]], int, int]) -> Tuple[float, float]:
    pairs, n_thin, n_prun = task
    stats = [seed_quality(select_seeds(potential, n_thin, n_prun), gt) for gt, potential in pairs]
    coverage, fp = np.mean(stats, axis=0)
    return float(coverage), float(fp)


def seed_quality_sweep(scenes: Sequence[Scene], n_thin_values: Sequence[int], n_prun_values: Sequence[int],
                       seed_mode: str = "ground-truth", t: Optional[float] = None, jobs: int = 1) -> pd.DataFrame:
    """Coverage and false-positive seed percentages averaged over scenes, one row per grid point."""
    if not scenes:
        raise PipelineError("seed-quality sweep needs at least one scene")
    t = PipelineConfig().t if t is None else t

    potentials = []
    for scene in scenes:
        if scene.gt is None:
            raise PipelineError(f"scene '{scene.name}' has no ground truth")
        if seed_mode == "ground-truth":
            if not scene.gt.labeled.all():
                raise PipelineError(f"ground truth of '{scene.name}' contains UNLABELED pixels")
            potentials.append(scene.gt)
        elif seed_mode == "estimated":
            if scene.lowres is None:
                raise PipelineError(f"scene '{scene.name}' has no low-resolution estimate")
            upsampled = bicubic_upsample_prob(scene.lowres, scene.gt.width, scene.gt.height)
            potentials.append(potential_seeds(upsampled, t))
        else:
            raise ValidationFailed("seed_mode", "out-of-range", f"expected one of {SEED_MODES}")

    pairs = [(scene.gt, potential) for scene, potential in zip(scenes, potentials)]
    grid = [(n_thin, n_prun) for n_thin in n_thin_values for n_prun in n_prun_values]
    stats = parallel_map(_seed_quality_point, [(pairs, n_thin, n_prun) for n_thin, n_prun in grid], jobs)

    rows = []
    for (n_thin, n_prun), (coverage, fp) in zip(grid, stats):
        logger.info(f"n_thin={n_thin} n_prun={n_prun}: coverage {coverage:.2f}%, fp {fp:.3f}%")
        rows.append({"n_thin": n_thin, "n_prun": n_prun, "coverage": coverage, "fp": fp})
    return pd.DataFrame(rows, columns=["n_thin", "n_prun", "coverage", "fp"])


# ============================================================================
# Scale sweep
# ============================================================================

def _scale_point(task: Tuple[Scene, ProbMap, PipelineConfig]) -> ConfusionCounts:
    scene, lowres, config = task
    result = refine(scene.image, lowres, scene.boundary, config)
    return confusion(result.labels, scene.gt)


def scale_sweep(scenes: Sequence[Scene], estimates: Mapping[str, Mapping[int, ProbMap]],
                scales: Sequence[int], configs: Optional[Sequence[PipelineConfig]] = None,
                jobs: int = 1) -> pd.DataFrame:
    """Highest pooled overall IoU at each scale over the given configurations."""
    configs = list(configs) if configs else [PipelineConfig()]
    if not scenes:
        raise PipelineError("scale sweep needs at least one scene")
    for scene in scenes:
        if scene.gt is None or scene.image is None:
            raise PipelineError(f"scene '{scene.name}' needs an image and ground truth")
        for scale in scales:
            if estimates.get(scene.name, {}).get(scale) is None:
                raise PipelineError(f"missing estimate for '{scene.name}' at scale {scale}")

    tasks = [(scene, estimates[scene.name][scale], config)
             for scale in scales for config in configs for scene in scenes]
    outcomes = iter(parallel_map(_scale_point, tasks, jobs))

    rows = []
    for scale in scales:
        best: Optional[Dict] = None
        for config in configs:
            counts: Optional[ConfusionCounts] = None
            for _ in scenes:
                c = next(outcomes)
                counts = c if counts is None else counts + c
            iou = 100.0 * overall_iou(counts)
            logger.info(f"Scale {scale}: IoU {iou:.2f} with t={config.t} n_thin={config.n_thin} "
                        f"n_prun={config.n_prun} beta={config.beta}")
            if best is None or iou > best["iou"]:
                best = {"scale": scale, "iou": iou, "t": config.t, "n_thin": config.n_thin,
                        "n_prun": config.n_prun, "beta": config.beta}
        rows.append(best)
    return pd.DataFrame(rows, columns=["scale", "iou", "t", "n_thin", "n_prun", "beta"])


# ============================================================================
# Upsampling error vs boundary distance
# ============================================================================

def upsampled_argmax(lowres: ProbMap, width: int, height: int) -> LabelMap:
    """Low-resolution argmax, nearest-neighbour upsampled: the crude baseline labelling."""
    labels = LabelMap(lowres.width, lowres.height, lowres.channels,
                      np.argmax(lowres.data, axis=0).astype(np.uint8))
    return nn_upsample_labels(labels, width, height)


def _scene_error_histogram(scene: Scene) -> BoundaryHistogram:
    crude = upsampled_argmax(scene.lowres, scene.gt.width, scene.gt.height)
    crude = LabelMap(crude.width, crude.height, scene.gt.num_labels, crude.data)
    return boundary_error_histogram(crude, scene.gt)


def upsampling_error_histogram(scenes: Sequence[Scene], jobs: int = 1) -> BoundaryHistogram:
    """Pool error counts by L1 distance to the ground-truth boundary over all scenes."""
    for scene in scenes:
        if scene.gt is None or scene.lowres is None:
            raise PipelineError(f"scene '{scene.name}' needs ground truth and a low-resolution estimate")
    pooled = BoundaryHistogram.empty()
    for hist in parallel_map(_scene_error_histogram, list(scenes), jobs):
        pooled = pooled + hist
    if pooled.is_empty:
        logger.warning("No upsampling errors found; histogram is empty")
    return pooled
