"""Command-line entry points.

Subcommands: gen-data, train-teacher, train-student, evaluate,
run-ablation. Exit codes: 0 success, 2 config error, 3 training
divergence, 4 precondition failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, PreconditionError, TrainingDiverged, load_config
from .io import default_class_names, save_annotations, save_video_tensor
from .metrics import format_map_table
from .synth import generate_video
from .train import evaluate_checkpoint, run_ablation, train_student, train_teacher

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_PRECONDITION = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML or JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: first config seed)")
    p.add_argument("--out", default="runs", help="output directory")


def _load(args) -> tuple[ExperimentConfig, int]:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    return cfg, seed


def cmd_gen_data(args) -> int:
    cfg, seed = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.data.spec
    annotations = []
    for i in range(args.count):
        sample, ann = generate_video(spec, seed + i)
        annotations.append(ann)
        save_video_tensor(out / f"{ann.video_id}.f32", sample.frames, sample.fps)
    save_annotations(annotations, out / "annotations.json", default_class_names(spec.num_classes))
    print(f"wrote {args.count} videos and annotations.json to {out}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg, seed = _load(args)
    path = train_teacher(cfg, seed, args.out)
    print(f"teacher checkpoint: {path}")
    return 0


def cmd_train_student(args) -> int:
    cfg, seed = _load(args)
    path = train_student(cfg, seed, args.out, teacher_path=args.teacher, preset=args.preset)
    print(f"student checkpoint: {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, seed = _load(args)
    report = evaluate_checkpoint(cfg, args.checkpoint, args.split, seed, args.out)
    print(json.dumps({k: report[k] for k in ("map_at_tiou", "avg")}, indent=1))
    return 0


def cmd_run_ablation(args) -> int:
    cfg, _ = _load(args)
    result = run_ablation(cfg, args.out)
    print(format_map_table(result["summary"], cfg.eval.tiou_thresholds))
    print(f"ordering holds: {result['verdict']['ordering_holds']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tadkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic videos and annotations")
    _add_common(p)
    p.add_argument("--count", type=int, default=8, help="number of videos")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the motion teacher")
    _add_common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="train a student preset")
    _add_common(p)
    p.add_argument("--teacher", default=None, help="teacher checkpoint (distillation presets)")
    p.add_argument("--preset", default=None, help="override the config preset")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="evaluate a student checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-ablation", help="train and compare all presets")
    _add_common(p)
    p.set_defaults(func=cmd_run_ablation)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except PreconditionError as e:
        print(f"precondition failed: {e}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
