"""
The refinement chain as one call:

    bicubic upsample -> potential seeds -> thin/prune -> edge weights -> random walker -> argmax
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

from morphrefine.core import EdgeWeightGrid, ImageRgb, LabelMap, PipelineConfig, ProbMap, SeedSet, same_grid
from morphrefine.errors import PipelineError
from morphrefine.resample import bicubic_upsample_prob
from morphrefine.rw_solver import RwSolution, argmax_labels, rw_solve
from morphrefine.seeding import potential_seeds, select_seeds
from morphrefine.weights import edge_weights, fallback_boundary_prob

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineResult:
    upsampled: ProbMap
    potential: LabelMap
    seeds: SeedSet
    weights: EdgeWeightGrid
    solution: RwSolution
    labels: LabelMap


def refine_with_seeds(boundary: ProbMap, seeds: SeedSet, config: PipelineConfig,
                      num_classes: Optional[int] = None) -> Tuple[RwSolution, LabelMap]:
    """Edge weights, random walker and argmax for an externally built seed set."""
    same_grid(boundary, seeds, "boundary")
    if seeds.is_empty:
        raise PipelineError("no seeds to propagate from",
                            suggestion="lower t or the thinning/pruning iteration counts")
    weights = edge_weights(boundary, config.beta)
    solution = rw_solve(weights, seeds, num_classes or seeds.num_labels,
                        tol=config.solver_tol, max_iter=config.solver_max_iter, workers=config.workers)
    return solution, argmax_labels(solution, seeds)


def refine(image: ImageRgb, lowres: ProbMap, boundary: Optional[ProbMap],
           config: Optional[PipelineConfig] = None) -> RefineResult:
    config = config or PipelineConfig()
    started = time.perf_counter()

    if boundary is None:
        logger.info("No boundary probability given; using the Sobel fallback gradient")
        boundary = fallback_boundary_prob(image)
    same_grid(image, boundary, "boundary")

    upsampled = bicubic_upsample_prob(lowres, image.width, image.height)
    potential = potential_seeds(upsampled, config.t)
    seeds = select_seeds(potential, config.n_thin, config.n_prun)
    if seeds.is_empty:
        raise PipelineError(f"no pixel passes the margin threshold t={config.t}",
                            suggestion="lower t")

    weights = edge_weights(boundary, config.beta)
    solution = rw_solve(weights, seeds, lowres.channels, tol=config.solver_tol,
                        max_iter=config.solver_max_iter, workers=config.workers)
    labels = argmax_labels(solution, seeds)

    logger.info(f"Refined {image.width}x{image.height} image in {time.perf_counter() - started:.2f}s "
                f"({len(seeds)} seeds, max CG iterations {max(solution.iterations)})")
    return RefineResult(upsampled, potential, seeds, weights, solution, labels)
