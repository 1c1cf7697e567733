"""Build aligned units, generate, smooth and score mouth blendshape coefficients.

Usage: ``audio2arkit [global flags] <subcommand> ...``.

Exit codes: 0 success, 1 partial failure, 2 invalid input or config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .alignment import AlignmentFailure
from .config import ConfigError, load_config
from .pipeline import EXIT_INVALID, EXIT_OK, EXIT_PARTIAL, StageError

log = logging.getLogger("audio2arkit")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="audio2arkit", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="pipeline config (YAML)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs instead of skipping")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: logical cores)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-units", help="construct aligned units and the manifest")
    b.add_argument("recordings", nargs="*", help="recording ids (default: whole corpus)")

    g = sub.add_parser("generate", help="predict coefficients for every manifest unit")
    g.add_argument("--manifest", type=Path)

    s = sub.add_parser("smooth", help="concatenate unit predictions and smooth per recording")
    s.add_argument("--manifest", type=Path)
    s.add_argument("--predictions", type=Path)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--manifest", type=Path)
    e.add_argument("--pred", type=Path, help="prediction directory (default: <output>/smoothed)")
    e.add_argument("--gt", type=Path, help="ground-truth directory (default: corpus)")

    i = sub.add_parser("inspect", help="summarise and validate a manifest, coefficient file or report")
    i.add_argument("path", type=Path)
    return p


def _emit(result: pipeline.StageResult) -> int:
    for line in result.lines:
        print(line)
    return result.exit_code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, check_paths=args.command != "inspect")
        if args.command == "build-units":
            return _emit(pipeline.cmd_build_units(config, args.recordings, args.force, args.jobs))
        if args.command == "generate":
            return _emit(pipeline.cmd_generate(config, args.manifest, args.force, args.jobs))
        if args.command == "smooth":
            return _emit(pipeline.cmd_smooth(config, args.predictions, args.manifest, args.force, args.jobs))
        if args.command == "eval":
            return _emit(pipeline.cmd_eval(config, args.pred, args.gt, args.manifest, args.force, args.jobs))
        if args.command == "inspect":
            kind, lines, problems = pipeline.inspect_path(args.path, pipeline.schema_of(config), config.fps)
            print(f"{args.path}: {kind}")
            for line in lines:
                print(f"  {line}")
            for prob in problems:
                print(f"  VIOLATION {prob}")
            return EXIT_PARTIAL if problems else EXIT_OK
    except (ConfigError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AlignmentFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
