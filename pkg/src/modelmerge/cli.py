"""Command-line front end.

Exit codes: 0 success, 1 input/compatibility error, 2 recipe error,
3 diff over tolerance.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import (
    CompatibilityError,
    FormatError,
    ModelMergeError,
    ParameterError,
    RecipeError,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RECIPE = 2
EXIT_DIFF = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modelmerge",
        description="Merge architecturally compatible transformer checkpoints "
                    "in parameter space.",
    )
    parser.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker threads for the merge pipeline (default 1)")
    parser.add_argument("--report", metavar="PATH", default=None,
                        help="write the per-layer weight report (hierarchical merges)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log per-tensor alignment decisions")
    sub = parser.add_subparsers(dest="command", required=True)

    p_merge = sub.add_parser("merge", help="run a merge recipe")
    p_merge.add_argument("recipe", help="path to a recipe file")

    p_inspect = sub.add_parser("inspect", help="summarize an archive")
    p_inspect.add_argument("path", help="archive file, index file, or shard directory")

    p_diff = sub.add_parser("diff", help="compare two compatible checkpoints")
    p_diff.add_argument("a")
    p_diff.add_argument("b")
    p_diff.add_argument("--tol", type=float, default=0.0, metavar="REAL",
                        help="max-abs tolerance for exit code 0 (default 0)")

    p_toy = sub.add_parser("gen-toy", help="generate a deterministic toy model trio")
    p_toy.add_argument("out_dir", metavar="out-dir")
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--preset", default="mistral-micro", choices=["mistral-micro"])

    return parser


def _cmd_merge(args) -> int:
    from .pipeline import run_merge

    result = run_merge(args.recipe, threads=args.threads, report_path=args.report)
    print(f"merged {result.tensors} tensors with {result.method} -> {result.output}")
    for stage in ("load", "merge+write", "total"):
        print(f"[{result.method}] {stage}: {result.timings[stage]:.3f}s")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    from .pipeline import inspect_checkpoint

    print(inspect_checkpoint(args.path))
    return EXIT_OK


def _cmd_diff(args) -> int:
    from .pipeline import diff_checkpoints

    lines, global_max, code = diff_checkpoints(args.a, args.b, args.tol)
    print("\n".join(lines))
    return code


def _cmd_gen_toy(args) -> int:
    from .testkit.toygen import ToyPreset, write_toy_dir

    preset = ToyPreset(seed=args.seed)
    paths = write_toy_dir(preset, args.out_dir)
    for label, path in paths.items():
        print(f"{label}: {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "merge": _cmd_merge,
        "inspect": _cmd_inspect,
        "diff": _cmd_diff,
        "gen-toy": _cmd_gen_toy,
    }
    try:
        return handlers[args.command](args)
    except (RecipeError, ParameterError) as exc:
        print(f"recipe error: {exc}", file=sys.stderr)
        return EXIT_RECIPE
    except (CompatibilityError, FormatError, FileNotFoundError, ModelMergeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
