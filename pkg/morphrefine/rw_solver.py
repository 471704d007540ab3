"""
Multi-class seeded random walker on the 4-adjacency grid.

For every class l the grounded system

    L_U x_U = -B^T x_seed

is solved with one-vs-rest boundary conditions (1 on seeds of l, 0 on other
seeds). L_U is never assembled: a matrix-free operator applies the weighted
grid Laplacian restricted to unseeded pixels, and scipy's conjugate gradient
runs on it with a Jacobi preconditioner.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import LinearOperator, cg

from morphrefine.core import EdgeWeightGrid, LabelMap, ProbMap, SeedSet
from morphrefine.errors import PipelineError, ValidationFailed

logger = logging.getLogger(__name__)

SUM_DRIFT_TOL = 1e-5
DENSE_PIXEL_CAP = 4096


@dataclass(frozen=True)
class RwSolution:
    probs: ProbMap
    iterations: Tuple[int, ...]
    residuals: Tuple[float, ...]
    converged: Tuple[bool, ...]
    sum_drift: float = 0.0

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


class GroundedLaplacian:
    """Weighted grid Laplacian restricted to the unseeded pixels, applied without assembly."""

    def __init__(self, weights: EdgeWeightGrid, seed_mask: np.ndarray):
        self.shape = (weights.height, weights.width)
        self.horizontal = weights.horizontal
        self.vertical = weights.vertical
        self.degree = weights.degree()
        self.free = ~seed_mask
        self.free_index = np.flatnonzero(self.free.ravel())

    @property
    def n_unknowns(self) -> int:
        return int(self.free_index.size)

    def adjacent_sum(self, x: np.ndarray) -> np.ndarray:
        """sum_j w_ij x_j over the 4-neighbours of every pixel."""
        out = np.zeros_like(x)
        out[:, :-1] += self.horizontal * x[:, 1:]
        out[:, 1:] += self.horizontal * x[:, :-1]
        out[:-1, :] += self.vertical * x[1:, :]
        out[1:, :] += self.vertical * x[:-1, :]
        return out

    def _scatter(self, x_u: np.ndarray) -> np.ndarray:
        full = np.zeros(self.shape[0] * self.shape[1], dtype=np.float64)
        full[self.free_index] = x_u
        return full.reshape(self.shape)

    def matvec(self, x_u: np.ndarray) -> np.ndarray:
        x = self._scatter(np.ravel(x_u))
        out = self.degree * x - self.adjacent_sum(x)
        return out.ravel()[self.free_index]

    def rhs(self, indicator: np.ndarray) -> np.ndarray:
        """-B^T x_seed: weighted sum of seeded neighbours carrying the class."""
        return self.adjacent_sum(indicator.astype(np.float64)).ravel()[self.free_index]

    def as_operator(self) -> LinearOperator:
        n = self.n_unknowns
        return LinearOperator((n, n), matvec=self.matvec, dtype=np.float64)

    def jacobi(self) -> LinearOperator:
        inv_diag = 1.0 / self.degree.ravel()[self.free_index]
        n = self.n_unknowns
        return LinearOperator((n, n), matvec=lambda r: inv_diag * np.ravel(r), dtype=np.float64)


def _check_inputs(weights: EdgeWeightGrid, seeds: SeedSet, num_classes: int) -> None:
    if (weights.width, weights.height) != (seeds.width, seeds.height):
        raise ValidationFailed("seeds", "dimension-mismatch",
                               f"weights {weights.width}x{weights.height} vs seeds {seeds.width}x{seeds.height}")
    if seeds.is_empty:
        raise PipelineError("empty seed set: the grounded Laplacian is singular",
                            suggestion="lower t or the thinning/pruning iteration counts")
    if num_classes < 1:
        raise ValidationFailed("K", "out-of-range")
    if int(seeds.labels.max()) >= num_classes:
        raise ValidationFailed("labels", "out-of-range",
                               f"seed label {int(seeds.labels.max())} >= K={num_classes}")


def _seed_indicator(seeds: SeedSet, label: int) -> np.ndarray:
    flat = np.zeros(seeds.width * seeds.height, dtype=np.float64)
    flat[seeds.pixels[seeds.labels == label]] = 1.0
    return flat.reshape(seeds.height, seeds.width)


def _solve_class(system: GroundedLaplacian, seeds: SeedSet, label: int,
                 tol: float, max_iter: int) -> Tuple[np.ndarray, int, float, bool]:
    indicator = _seed_indicator(seeds, label)
    x = indicator.copy()
    if system.n_unknowns == 0:
        return x, 0, 0.0, True

    b = system.rhs(indicator)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        # no unseeded pixel touches a seed of this class: x_U = 0 solves exactly
        return x, 0, 0.0, True

    iterations = 0

    def count(_xk):
        nonlocal iterations
        iterations += 1

    x_u, info = cg(system.as_operator(), b, x0=np.zeros_like(b), rtol=tol, atol=0.0,
                   maxiter=max_iter, M=system.jacobi(), callback=count)
    residual = float(np.linalg.norm(b - system.matvec(x_u)) / b_norm)
    converged = info == 0
    if not converged:
        logger.warning(f"Class {label}: CG stopped after {iterations} iterations, "
                       f"relative residual {residual:.3e} > tol {tol:.1e}")
    else:
        logger.debug(f"Class {label}: converged in {iterations} iterations, residual {residual:.3e}")

    x.ravel()[system.free_index] = x_u
    return x, iterations, residual, converged


def _sum_drift(values: np.ndarray) -> float:
    """Largest per-pixel deviation of the class probabilities from summing to 1."""
    drift = float(np.max(np.abs(values.sum(axis=0) - 1.0)))
    if drift > SUM_DRIFT_TOL:
        logger.warning(f"Class probabilities drift from 1 by up to {drift:.2e}; "
                       f"consider a tighter solver tolerance")
    return drift


def default_workers(num_classes: int) -> int:
    return max(1, min(num_classes, os.cpu_count() or 1))


def rw_solve(weights: EdgeWeightGrid, seeds: SeedSet, num_classes: int,
             tol: float = 1e-6, max_iter: int = 2000, workers: Optional[int] = None) -> RwSolution:
    """Per-class grounded solves; `workers` threads, by default one per class up to the CPU count."""
    _check_inputs(weights, seeds, num_classes)
    if not tol > 0:
        raise ValidationFailed("tol", "out-of-range", f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValidationFailed("max_iter", "out-of-range")
    if workers is None:
        workers = default_workers(num_classes)
    elif workers < 1:
        raise ValidationFailed("workers", "out-of-range")

    system = GroundedLaplacian(weights, seeds.mask())
    logger.info(f"Random walker: {weights.width}x{weights.height} grid, {len(seeds)} seeds, "
                f"{system.n_unknowns} unknowns, K={num_classes}")

    def solve(label: int):
        return _solve_class(system, seeds, label, tol, max_iter)

    if workers > 1 and num_classes > 1:
        with ThreadPoolExecutor(max_workers=min(workers, num_classes)) as pool:
            results = list(pool.map(solve, range(num_classes)))
    else:
        results = [solve(label) for label in range(num_classes)]

    values = np.stack([r[0] for r in results])
    drift = _sum_drift(values)
    return RwSolution(
        probs=ProbMap(weights.width, weights.height, num_classes, values.astype(np.float32)),
        iterations=tuple(r[1] for r in results),
        residuals=tuple(r[2] for r in results),
        converged=tuple(r[3] for r in results),
        sum_drift=drift,
    )


def laplacian_matrix(weights: EdgeWeightGrid) -> sparse.csr_matrix:
    """Assembled weighted Laplacian, pixels in row-major order."""
    h, w = weights.height, weights.width
    index = np.arange(h * w).reshape(h, w)
    rows = np.concatenate([index[:, :-1].ravel(), index[:-1, :].ravel()])
    cols = np.concatenate([index[:, 1:].ravel(), index[1:, :].ravel()])
    vals = np.concatenate([weights.horizontal.ravel(), weights.vertical.ravel()])
    adjacency = sparse.coo_matrix((vals, (rows, cols)), shape=(h * w, h * w))
    adjacency = (adjacency + adjacency.T).tocsr()
    return (sparse.diags(np.asarray(adjacency.sum(axis=1)).ravel()) - adjacency).tocsr()


def dense_oracle_solve(weights: EdgeWeightGrid, seeds: SeedSet, num_classes: int) -> RwSolution:
    """Direct solve of the same grounded systems by dense factorization; small grids only."""
    _check_inputs(weights, seeds, num_classes)
    n = weights.width * weights.height
    if n > DENSE_PIXEL_CAP:
        raise PipelineError(f"dense oracle limited to {DENSE_PIXEL_CAP} pixels, got {n}")

    lap = laplacian_matrix(weights).toarray()
    seeded = seeds.mask().ravel()
    free = np.flatnonzero(~seeded)
    fixed = np.flatnonzero(seeded)
    lap_u = lap[np.ix_(free, free)]
    b_t = lap[np.ix_(free, fixed)]
    fixed_labels = seeds.to_label_map().data.ravel()[fixed]

    values = np.zeros((num_classes, n), dtype=np.float64)
    for label in range(num_classes):
        x_seed = (fixed_labels == label).astype(np.float64)
        values[label, fixed] = x_seed
        if free.size:
            values[label, free] = linalg.solve(lap_u, -b_t @ x_seed, assume_a="pos")

    values = values.reshape(num_classes, weights.height, weights.width)
    return RwSolution(
        probs=ProbMap(weights.width, weights.height, num_classes, values.astype(np.float32)),
        iterations=(0,) * num_classes,
        residuals=(0.0,) * num_classes,
        converged=(True,) * num_classes,
        sum_drift=float(np.max(np.abs(values.sum(axis=0) - 1.0))),
    )


def argmax_labels(sol: RwSolution, seeds: SeedSet) -> LabelMap:
    probs = sol.probs
    labels = np.argmax(probs.data, axis=0).astype(np.uint8)  # first maximum wins ties
    if not seeds.is_empty:
        labels.ravel()[seeds.pixels] = seeds.labels
    return LabelMap(probs.width, probs.height, probs.channels, labels)
