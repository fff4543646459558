"""Command line entry point: ``assg <verb> --config run.json``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from . import pipeline as pl
from .corpus import STREAMS, FormatError, GenerationError
from .evaluator import EvaluationError
from .seeding import SeedError
from .trainer import CheckpointFormatError, TrainingError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assg", description="Seeded sequence growing for temporal action localization.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (defaults when omitted)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    sub.add_parser("gen", parents=[common], help="generate the synthetic corpus")
    sub.add_parser("train-baseline", parents=[common], help="train the CAS baseline and dump CAS sequences")
    sub.add_parser("seed", parents=[common], help="extract initial seeds for every training video")
    p = sub.add_parser("train", parents=[common], help="train one stream")
    p.add_argument("--stream", required=True, choices=STREAMS)
    p.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    sub.add_parser("detect", parents=[common], help="fuse both streams and write detections")
    p = sub.add_parser("eval", parents=[common], help="score detections on the test split")
    p.add_argument("--detections", help="detections JSON (default: the detect output)")
    p = sub.add_parser("plot", parents=[common], help="heatmap curves and detections for one video")
    p.add_argument("--video", required=True)
    p = sub.add_parser("ablate", parents=[common], help="compare variants")
    p.add_argument("--which", required=True, choices=pl.ABLATIONS)
    return parser


def run(args: argparse.Namespace) -> int:
    cfg = pl.RunConfig.load(args.config)
    if args.verb == "gen":
        print(pl.cmd_gen(cfg))
    elif args.verb == "train-baseline":
        pl.cmd_train_baseline(cfg)
        print(cfg.out / "baseline")
    elif args.verb == "seed":
        maps = pl.cmd_seed(cfg)
        for stream, m in maps.items():
            print(f"{stream}: {sum(lm.n_labeled for lm in m.values())} seeds over {len(m)} videos")
    elif args.verb == "train":
        state = pl.cmd_train(cfg, args.stream, args.resume)
        last = state.history[-1] if state.history else None
        print(f"{args.stream}: epoch {state.epoch}" + (
            f", l_seed {last.l_seed:.4f}, l_class {last.l_class:.4f}, labeled {last.labeled_fraction:.3f}"
            if last else ""))
    elif args.verb == "detect":
        print(pl.cmd_detect(cfg))
    elif args.verb == "eval":
        report = pl.cmd_eval(cfg, args.detections)
        print(json.dumps({"map": {repr(t): round(v, 4) for t, v in report.map.items()},
                          "ave_map": round(report.ave_map, 4)}))
    elif args.verb == "plot":
        csv_path, svg_path = pl.cmd_plot(cfg, args.video)
        print(svg_path)
    elif args.verb == "ablate":
        rows = pl.cmd_ablate(cfg, args.which)
        print(pl.format_table(rows, cfg.eval.thresholds))
    return 0


def _error(kind: str, message: str) -> int:
    first = " ".join(str(message).split())
    print(f"assg: error [{kind}] {first}", file=sys.stderr)
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except pl.PipelineError as exc:
        return _error(exc.kind, str(exc))
    except ValidationError as exc:
        errs = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        return _error("bad-config", errs)
    except (FormatError, CheckpointFormatError) as exc:
        return _error("bad-format", str(exc))
    except FileNotFoundError as exc:
        return _error("missing-input", f"{exc.filename}: not found")
    except TrainingError as exc:
        return _error("training", str(exc))
    except (GenerationError, SeedError, EvaluationError, ValueError) as exc:
        return _error("invalid", str(exc))


if __name__ == "__main__":
    sys.exit(main())
