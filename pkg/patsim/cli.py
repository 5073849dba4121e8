"""
Command-line front end: simulate, align and evaluate
"""

import argparse
import logging
import re
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from dotenv import load_dotenv

from . import __version__
from .alignment import VARIANTS, AlignmentError, AlignmentResult, align, as_series
from .cache import DistanceCache
from .cohort import read_cohort, summarize_cohort, write_cohort
from .config import (
    METHODS,
    RunConfig,
    check_variant,
    log_level,
    methods_for_variant,
    parse_float_list,
    parse_int_list,
    parse_methods,
)
from .datagen import PET_PATTERNS, GeneratorConfig, generate, planted_signal_cohort
from .pipeline import run_evaluation
from .report import ReportBuilder, write_report

logger = logging.getLogger(__name__)

PROG = "patsim"
_SEPARATORS = re.compile(r"[,\s]+")


def read_series(path: Union[str, Path]) -> np.ndarray:
    """One time point per line, comma- or whitespace-separated reals; '#' starts a comment"""
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append([float(x) for x in _SEPARATORS.split(line) if x])
            except ValueError:
                raise AlignmentError(f"{path}:{line_number}: non-numeric value") from None
            if len(rows[-1]) != len(rows[0]):
                raise AlignmentError(f"{path}:{line_number}: expected {len(rows[0])} values per line")
    if not rows:
        raise AlignmentError(f"{path}: series is empty")
    return as_series(rows)


def format_alignment(result: AlignmentResult) -> List[str]:
    start, end = result.matched_span
    return [
        f"variant: {result.variant}",
        f"distance: {result.distance!r}",
        "path: " + " ".join(f"({i},{j})" for i, j in result.path),
        f"matched_span: {start}..{end} (series {result.spanned})",
    ]


def cmd_simulate(args: argparse.Namespace) -> int:
    """Generate a cohort file and print its summary"""
    config = GeneratorConfig(
        n_patients=args.n_patients,
        seed=args.seed if args.seed is not None else RunConfig.from_env().seed,
        horizon=args.horizon,
        pet_pattern=args.pet_pattern,
        slope_separation=args.slope_separation,
        noise=args.noise,
    )
    cohort = planted_signal_cohort(config) if args.planted else generate(config)
    write_cohort(cohort, args.out)

    print("configuration:")
    for key, value in asdict(config).items():
        print(f"  {key}: {list(value) if isinstance(value, tuple) else value}")
    print(f"  planted: {args.planted}")
    print("summary:")
    for key, value in summarize_cohort(cohort).items():
        print(f"  {key}: {round(value, 4) if isinstance(value, float) else value}")
    print(f"wrote {args.out}")
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    """Align two series files and print distance, path and matched span"""
    series_a = read_series(args.series_a)
    series_b = read_series(args.series_b)
    variants = VARIANTS if args.variant == "all" else (args.variant,)

    blocks = [format_alignment(align(series_a, series_b, variant)) for variant in variants]
    print("\n\n".join("\n".join(block) for block in blocks))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Run the leave-one-patient-out comparison and write the report, records and snapshot model"""
    methods = parse_methods(args.methods) if args.methods else None
    if args.variant:
        methods = methods_for_variant(check_variant(args.variant), methods)

    config = RunConfig.from_env(
        cohort_path=str(args.cohort),
        out_dir=str(args.out),
        methods=methods,
        modalities=tuple(m.strip() for m in args.modalities.split(",") if m.strip()) if args.modalities else None,
        horizon=args.horizon,
        seed=args.seed,
        jobs=args.jobs,
        grid_c=parse_float_list(args.grid_c, "--grid-c") if args.grid_c else None,
        grid_rank=parse_int_list(args.grid_rank, "--grid-rank") if args.grid_rank else None,
        grid_lambda=parse_float_list(args.grid_lambda, "--grid-lambda") if args.grid_lambda else None,
        inner_k=args.inner_k,
        cache_dir=args.cache_dir,
    )
    if args.no_cache:
        config = replace(config, cache_dir=None)

    cohort = read_cohort(args.cohort, horizon=config.horizon)
    cache = DistanceCache(config.cache_dir) if config.cache_dir else None
    report = run_evaluation(cohort, config, cache=cache)
    write_report(report, config.out_dir)
    print(ReportBuilder().create_report_text(report), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Longitudinal patient similarity toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (env PATSIM_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="generate a synthetic cohort file")
    simulate.add_argument("--n-patients", type=int, default=GeneratorConfig.n_patients)
    simulate.add_argument("--seed", type=int, default=None, help="default: PATSIM_SEED or 0")
    simulate.add_argument("--horizon", type=int, default=GeneratorConfig.horizon)
    simulate.add_argument("--planted", action="store_true", help="carry the label signal in biomarker decline")
    simulate.add_argument("--slope-separation", type=float, default=GeneratorConfig.slope_separation)
    simulate.add_argument("--noise", type=float, default=GeneratorConfig.noise)
    simulate.add_argument("--pet-pattern", choices=PET_PATTERNS, default=GeneratorConfig.pet_pattern)
    simulate.add_argument("--out", default="cohort.jsonl")
    simulate.set_defaults(handler=cmd_simulate)

    align_cmd = commands.add_parser("align", help="align two series files")
    align_cmd.add_argument("series_a")
    align_cmd.add_argument("series_b")
    align_cmd.add_argument("--variant", choices=VARIANTS + ("all",), default="subsequence")
    align_cmd.set_defaults(handler=cmd_align)

    evaluate = commands.add_parser("evaluate", help="leave-one-patient-out comparison of methods")
    evaluate.add_argument("cohort")
    evaluate.add_argument("--methods", default=None, help=f"comma-separated subset of {','.join(METHODS)}")
    evaluate.add_argument("--variant", default=None, help="shorthand for --methods snapshot,<variant>; added to --methods when both are given")
    evaluate.add_argument("--modalities", default=None, help="comma-separated modalities (default: all)")
    evaluate.add_argument("--horizon", type=int, default=None)
    evaluate.add_argument("--seed", type=int, default=None)
    evaluate.add_argument("--jobs", type=int, default=None)
    evaluate.add_argument("--grid-c", default=None)
    evaluate.add_argument("--grid-rank", default=None)
    evaluate.add_argument("--grid-lambda", default=None)
    evaluate.add_argument("--inner-k", type=int, default=None)
    evaluate.add_argument("--cache-dir", default=None)
    evaluate.add_argument("--no-cache", action="store_true", help="recompute every distance matrix")
    evaluate.add_argument("--out", default="patsim_report")
    evaluate.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit status"""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    level = (args.log_level or log_level()).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )

    try:
        return args.handler(args)
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
