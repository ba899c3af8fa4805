"""Command-line front end.

Exit status: 0 success, 1 usage or configuration error, 2 missing input,
3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, PipelineConfig
from .pipeline import STAGES, MissingInput, Run, run_pipeline

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_STAGE = 0, 1, 2, 3

HELP = {"synth": "write the synthetic clean corpus (or ingest corpus.source)",
        "attack": "partition accounts and stage the PBSM and poisoning attacks",
        "detect": "run the acoustic trigger detector over every account",
        "embed": "compute per-file embeddings into the VSEM cache",
        "train": "train the classifier with stratified k-fold cross-validation",
        "eval": "vote, compose with the acoustic layer and write metrics",
        "pipeline": "run every stage in order"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (merged over the defaults)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="run directory")
    common.add_argument("--force", action="store_true", help="re-run completed stages")
    common.add_argument("--workers", type=int, help="parallel per-account tasks")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted config override, e.g. train.epochs=5")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    parser = _Parser(prog="voiceshield", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in (*STAGES, "pipeline"):
        sub.add_parser(name, parents=[common], help=HELP[name])
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = PipelineConfig.load(args.config, args.overrides, seed=args.seed, out=args.out,
                                     workers=args.workers)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "config":
        print(json.dumps(config.to_json(), indent=2, sort_keys=True))
        return EXIT_OK
    run = Run(config, force=args.force)
    stages = STAGES if args.command == "pipeline" else (args.command,)
    try:
        results = run_pipeline(run, stages)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any other failure inside a stage
        print(f"error: stage failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for r in results:
        print(f"{r.stage:<7} {'skipped' if r.skipped else 'done':<8} {r.seconds:8.1f} s")
    if "eval" in stages:
        print((run.out / "report.txt").read_text(), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
