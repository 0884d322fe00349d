"""Command-line front end: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig
from .embedder import EmbeddingError
from .geolink import GeoError, InputFormatError
from .pipeline import STAGES, StageError
from .taxonomy import LabelError
from .trainer import TrainingDiverged

logger = logging.getLogger("streetcrop")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
INPUT_ERRORS = (InputFormatError, GeoError, LabelError, EmbeddingError, FileNotFoundError, json.JSONDecodeError)


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", type=Path, help="JSON pipeline configuration", **({"default": None} | d))
    p.add_argument("--seed", type=int, help="master seed (overrides config)", **({"default": None} | d))
    p.add_argument("--jobs", type=int, help="worker processes for the sweep", **({"default": None} | d))
    p.add_argument("--out-dir", type=Path, help="working directory for all stage files", **({"default": Path("run")} | d))
    p.add_argument("-v", "--verbose", action="store_true", **({"default": False} | d))
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only", **({"default": False} | d))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streetcrop", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic survey (or a noisy vote table)",
        "embed": "compute reference embeddings for the image manifest",
        "link": "link pictures to parcels and attach field observations",
        "sample": "balanced per-class sample and train/validation/test split",
        "train": "train one softmax head with the configured hyper-parameters",
        "sweep": "hyper-parameter sweep with an augmented second round",
        "infer": "predict the inference set with the best (or given) model",
        "aggregate": "score picture- and parcel-level predictions",
        "report": "write comparison tables, confusion matrices and PPP tables",
    }
    for name, h in helps.items():
        sp = sub.add_parser(name, help=h)
        _global_flags(sp, suppress=True)
        if name == "infer":
            sp.add_argument("--model", type=Path, default=None, help="model file (default: best_model.bin)")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.sweep = dataclasses.replace(cfg.sweep, seed=args.seed)
        cfg.synth = dataclasses.replace(cfg.synth, seed=args.seed)
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        cfg.jobs = args.jobs
    return cfg


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    try:
        cfg = load_config(args)
    except (ValueError, TypeError, *INPUT_ERRORS) as exc:
        logger.error("bad configuration: %s", exc)
        return EXIT_INPUT
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stage = STAGES[args.command]
    try:
        if args.command == "infer":
            result = stage(cfg, out, args.model)
        else:
            result = stage(cfg, out)
    except INPUT_ERRORS as exc:
        logger.error("%s: input error: %s", args.command, exc)
        return EXIT_INPUT
    except (StageError, TrainingDiverged, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_RUNTIME
    except ValueError as exc:
        # remaining value errors come from inconsistent stage inputs
        logger.error("%s: input error: %s", args.command, exc)
        return EXIT_INPUT
    logger.info("%s done: %s", args.command, json.dumps(result, sort_keys=True, default=str)[:2000])
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
