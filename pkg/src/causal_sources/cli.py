"""Command-line entry point: ``causal-sources <stage> [--config ...]``.

Exit codes: 0 on success, 2 on invalid input or stale artifacts, 1 on any
other failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

from .config import load_config
from .exceptions import ArtifactError, ValidationError
from .pipeline import RUNNERS

STAGE_HELP = {
    "ingest": "parse and validate event/demographics tables",
    "curves": "infer daily curves for every patient",
    "matrix": "sample cross sections and standardize",
    "ica": "decompose the matrix into independent sources",
    "train": "fit the outcome model on sources or raw variables",
    "explain": "Shapley values and source ranking report",
    "synth": "write a synthetic corpus and its ground truth",
    "eval": "score pipeline artifacts against the ground truth",
}


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=default, help="master seed (overrides config)")
    parser.add_argument("--artifacts", default=default, help="artifact directory (overrides config)")
    parser.add_argument("--set", action="append", default=argparse.SUPPRESS if suppress else [],
                        metavar="KEY=VALUE", help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causal-sources", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=STAGE_HELP[name])
        _global_flags(p, suppress=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        cfg = load_config(args.config, **overrides)
        cfg.update({k: v for k, v in (("seed", args.seed), ("artifacts", args.artifacts)) if v is not None})
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            summary = RUNNERS[args.stage](cfg)
    except (ValidationError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, then signal internal failure
        logging.getLogger(__name__).debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"{args.stage}: " + json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
