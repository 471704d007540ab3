"""
Command-line entry point.

Exit codes: 0 success, 2 invalid arguments, 3 I/O failure, 4 pipeline or
validation error. Diagnostics go to standard error; reports go to standard
output or to the --out file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from morphrefine import __version__
from morphrefine.core import DEFAULT_PRESET, MAX_LABELS, PRESETS, PipelineConfig
from morphrefine.errors import PipelineError, RasterFormatError, UsageError, ValidationFailed
from morphrefine.fixtures import SHAPES, make_scene, write_scene
from morphrefine.metrics import iou_table
from morphrefine.tasks.jobs import (
    BoundaryHistParams,
    NoiseSweepParams,
    RefineParams,
    ScaleSweepParams,
    SeedQualityParams,
    evaluate_pairs,
    histogram_table,
    noise_table,
    run_refine,
    scale_table,
    seed_quality_table,
)

logger = logging.getLogger("morphrefine")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PIPELINE = 4

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


# ============================================================================
# Argument parsing
# ============================================================================

def _add_config_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline configuration")
    group.add_argument("--preset", default=DEFAULT_PRESET, choices=sorted(PRESETS),
                       help=f"hyperparameter preset (default: {DEFAULT_PRESET})")
    group.add_argument("--t", type=float, help="top-2 margin threshold")
    group.add_argument("--n-thin", type=int, help="thinning iterations")
    group.add_argument("--n-prun", type=int, help="pruning iterations")
    group.add_argument("--beta", type=float, help="edge-weight sharpness")
    group.add_argument("--tol", type=float, help="relative residual tolerance of the solver")
    group.add_argument("--max-iter", type=int, help="solver iteration cap")
    group.add_argument("--workers", type=int, help="threads for the per-class solves")


def _config_fields(args) -> dict:
    return {
        "preset": args.preset,
        "t": args.t,
        "n_thin": args.n_thin,
        "n_prun": args.n_prun,
        "beta": args.beta,
        "solver_tol": args.tol,
        "solver_max_iter": args.max_iter,
        "workers": args.workers,
    }


def _usage_checked(build):
    try:
        return build()
    except ValidationFailed as e:
        raise UsageError(f"invalid {e.field}: {e.details or e.kind}") from e


def _checked_config(args) -> PipelineConfig:
    """Configuration from --preset and overrides; bad values are usage errors."""
    fields = _config_fields(args)
    return _usage_checked(lambda: PipelineConfig.from_preset(fields.pop("preset"), **fields))


def _add_dataset_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="dataset root (images/, gt/, boundary/, lowres/, estimates/)")
    parser.add_argument("--num-labels", type=int, default=2)
    parser.add_argument("--out", help="CSV report path (default: standard output)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morphrefine",
                                     description="Refine coarse semantic labels with seeded random walks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="refine one image")
    p.add_argument("--image", required=True)
    p.add_argument("--lowres-prob", required=True, help="low-resolution class probabilities (PRB1)")
    boundary = p.add_mutually_exclusive_group(required=True)
    boundary.add_argument("--boundary-prob", help="boundary probability map (PRB1, one channel)")
    boundary.add_argument("--fallback-gradient", action="store_true",
                          help="use the normalized Sobel gradient of the image instead")
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-probs", help="write the random-walker probabilities (PRB1)")
    p.add_argument("--out-seeds", help="write the seed map (PNG, 255 = unseeded)")
    p.add_argument("--out-weights", help="write edge weights as <stem>_h.prb and <stem>_v.prb")
    _add_config_args(p)
    p.set_defaults(handler=cmd_refine)

    p = sub.add_parser("eval", help="IoU of predicted label maps against ground truth")
    p.add_argument("--pred", required=True, help="label PNG or directory of PNGs")
    p.add_argument("--gt", required=True, help="label PNG or directory of PNGs")
    p.add_argument("--num-labels", type=int, default=MAX_LABELS)
    p.add_argument("--per-class", action="store_true", help="print the per-label CSV table")
    p.add_argument("--boundary-hist", metavar="CSV", help="write error frequency vs boundary distance")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("experiment", help="robustness and limitation studies")
    exp = p.add_subparsers(dest="experiment", required=True)

    e = exp.add_parser("seed-quality", help="seed coverage and false positives over n_thin x n_prun")
    _add_dataset_args(e)
    e.add_argument("--n-thin-values", type=int, nargs="+", default=[20, 40, 60, 80, 100])
    e.add_argument("--n-prun-values", type=int, nargs="+", default=[20])
    e.add_argument("--seed-mode", choices=["ground-truth", "estimated"], default="ground-truth")
    _add_config_args(e)
    e.set_defaults(handler=cmd_seed_quality)

    e = exp.add_parser("noise-sweep", help="Gaussian noise in the boundary probability")
    _add_dataset_args(e)
    e.add_argument("--sigma2", type=float, nargs="+", default=[0.02, 0.1, 0.5, 1.0])
    e.add_argument("--trials", type=int, default=50)
    e.add_argument("--seed-mode", choices=["ground-truth", "estimated"], default="estimated")
    e.add_argument("--rng-seed", type=int, default=0)
    _add_config_args(e)
    e.set_defaults(handler=cmd_noise_sweep)

    e = exp.add_parser("scale-sweep", help="best overall IoU per low-resolution scale")
    _add_dataset_args(e)
    e.add_argument("--scales", type=int, nargs="+", default=[32, 64, 128, 150, 256, 512])
    e.add_argument("--t-grid", type=float, nargs="+", help="margin thresholds to search per scale")
    e.add_argument("--beta-grid", type=float, nargs="+", help="beta values to search per scale")
    _add_config_args(e)
    e.set_defaults(handler=cmd_scale_sweep)

    e = exp.add_parser("boundary-hist", help="upsampling error frequency vs boundary distance")
    _add_dataset_args(e)
    e.set_defaults(handler=cmd_boundary_hist)

    p = sub.add_parser("fixture", help="write synthetic scenes in the dataset layout")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--shape", choices=[*SHAPES, "all"], default="all")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--lowres-size", type=int, default=64)
    p.add_argument("--band-error", type=float, default=0.15)
    p.add_argument("--edge-strength", type=float, default=0.05)
    p.add_argument("--scales", type=int, nargs="*", default=[32, 64, 128, 256],
                   help="long-axis lengths of the clean per-scale estimates")
    p.add_argument("--rng-seed", type=int, default=0)
    p.set_defaults(handler=cmd_fixture)

    p = sub.add_parser("serve", help="run the JSON job service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)
    return parser


# ============================================================================
# Commands
# ============================================================================

def _write_report(frame: pd.DataFrame, out: Optional[str]) -> None:
    if out:
        frame.to_csv(out, index=False)
        logger.info(f"Wrote {len(frame)} rows to {out}")
    else:
        frame.to_csv(sys.stdout, index=False)


def cmd_refine(args) -> int:
    _checked_config(args)
    params = RefineParams(
        image=args.image,
        lowres=args.lowres_prob,
        boundary=None if args.fallback_gradient else args.boundary_prob,
        out_labels=args.out_labels,
        out_probs=args.out_probs,
        out_seeds=args.out_seeds,
        out_weights=args.out_weights,
        **_config_fields(args),
    )
    summary = run_refine(params)
    if not summary["converged"]:
        logger.warning(f"Solver did not converge for every class; residuals {summary['residuals']}")
    logger.info(f"Wrote labels to {args.out_labels} ({summary['seeds']} seeds)")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not 1 <= args.num_labels <= MAX_LABELS:
        raise UsageError(f"--num-labels must be in [1, {MAX_LABELS}]")
    outcome = evaluate_pairs(args.pred, args.gt, args.num_labels, jobs=max(1, args.jobs),
                             with_histogram=bool(args.boundary_hist))
    table = iou_table(outcome.counts)
    print(f"overall IoU: {table['iou'].iloc[-1]:.2f}")
    if args.per_class:
        present = (table["tp"] + table["fp"] + table["fn"]) > 0
        table[present].to_csv(sys.stdout, index=False, float_format="%.2f")
    if args.boundary_hist:
        outcome.histogram.to_frame().to_csv(args.boundary_hist, index=False)
    return EXIT_OK


def cmd_seed_quality(args) -> int:
    _checked_config(args)
    params = SeedQualityParams(data=args.data, num_labels=args.num_labels, n_thin_values=args.n_thin_values,
                               n_prun_values=args.n_prun_values, seed_mode=args.seed_mode, jobs=args.jobs,
                               **_config_fields(args))
    _write_report(seed_quality_table(params), args.out)
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    _checked_config(args)
    params = NoiseSweepParams(data=args.data, num_labels=args.num_labels, sigma2=args.sigma2, trials=args.trials,
                              seed_mode=args.seed_mode, rng_seed=args.rng_seed, jobs=args.jobs,
                              **_config_fields(args))
    _write_report(noise_table(params), args.out)
    return EXIT_OK


def cmd_scale_sweep(args) -> int:
    params = ScaleSweepParams(data=args.data, num_labels=args.num_labels, scales=args.scales, jobs=args.jobs,
                              **_config_fields(args))
    base = _checked_config(args)
    configs = [_usage_checked(lambda: PipelineConfig.create(**{**base.model_dump(), "t": t, "beta": beta}))
               for t in (args.t_grid or [base.t])
               for beta in (args.beta_grid or [base.beta])]
    _write_report(scale_table(params, configs), args.out)
    return EXIT_OK


def cmd_boundary_hist(args) -> int:
    params = BoundaryHistParams(data=args.data, num_labels=args.num_labels, jobs=args.jobs)
    _write_report(histogram_table(params), args.out)
    return EXIT_OK


def cmd_fixture(args) -> int:
    shapes = SHAPES if args.shape == "all" else (args.shape,)
    for shape in shapes:
        try:
            scene = make_scene(shape, size=args.size, lowres_size=args.lowres_size, band_error=args.band_error,
                               edge_strength=args.edge_strength, rng_seed=args.rng_seed)
        except ValueError as e:
            raise UsageError(str(e)) from e
        write_scene(scene, args.out, [s for s in args.scales if s <= args.size])
    return EXIT_OK


def cmd_serve(args) -> int:
    from morphrefine.main import serve

    serve(host=args.host, port=args.port)
    return EXIT_OK


# ============================================================================
# Entry point
# ============================================================================

def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        return args.handler(args)
    except UsageError as e:
        print(f"morphrefine: error: {e.message}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as e:
        first = e.errors()[0]
        print(f"morphrefine: error: invalid {'.'.join(map(str, first['loc']))}: {first['msg']}", file=sys.stderr)
        return EXIT_USAGE
    except RasterFormatError as e:
        print(f"morphrefine: error: {e.message}" + (f" ({e.details})" if e.details else ""), file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"morphrefine: error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValidationFailed, PipelineError) as e:
        print(f"morphrefine: error: {e.message}" + (f" ({e.details})" if e.details else ""), file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
