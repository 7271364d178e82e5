"""Experiment driver: teacher/student training, evaluation, ablation.

Everything is deterministic per seed: model initialization, batch
order and data generation all derive from the run seed, and torch runs
single-threaded so summation order is fixed.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import ExperimentConfig, PreconditionError, TrainingDiverged
from .distill import TeacherBundle, load_teacher, save_teacher
from .head import DetectionHead, assign, decode, detection_loss, nms
from .backbone import VideoEncoder
from .metrics import EvalConfig, format_map_table, mean_average_precision
from .model import DISTILL_PRESETS, PRESETS, StudentModel, load_student, save_student
from .synth import MotionMaps, VideoSample, generate_video, motion_input
from .types import LossWeights, PredictionSet

# seed-space offsets keeping the splits disjoint; the test split does not
# depend on the run seed so every arm is scored on identical videos
_TRAIN_BASE = 0
_VAL_BASE = 500_000
_TEST_BASE = 900_000


def _derive_seed(run_seed: int, tag: str) -> int:
    return zlib.crc32(f"{tag}:{run_seed}".encode()) & 0x7FFFFFFF


@dataclass
class Example:
    sample: VideoSample
    motion: MotionMaps | None


def build_split(
    cfg: ExperimentConfig, split: str, run_seed: int, with_motion: bool
) -> list[Example]:
    spec = cfg.data.spec
    if split == "train":
        base, count = _TRAIN_BASE + 1_000_000 * (run_seed + 1), cfg.data.n_train
    elif split == "val":
        base, count = _VAL_BASE + 1_000_000 * (run_seed + 1), cfg.data.n_val
    elif split == "test":
        base, count = _TEST_BASE, cfg.data.n_test
    else:
        raise ValueError(f"unknown split {split!r}")
    examples = []
    for i in range(count):
        sample, _ = generate_video(spec, base + i)
        motion = motion_input(sample, cfg.model.teacher_modality) if with_motion else None
        examples.append(Example(sample, motion))
    return examples


def _check_finite(value: torch.Tensor, context: str, snapshot: dict) -> None:
    if not torch.isfinite(value):
        raise TrainingDiverged(f"non-finite loss in {context}: {value.item()!r}; snapshot: {snapshot}")


def _evaluate_preds(
    infer: Callable[[VideoSample], PredictionSet],
    examples: Sequence[Example],
    num_classes: int,
    eval_cfg: EvalConfig,
) -> dict:
    video_preds = {}
    video_gts = {}
    for ex in examples:
        ann = ex.sample.annotation
        video_gts[ann.video_id] = ann
        video_preds[ann.video_id] = infer(ex.sample).predictions
    return mean_average_precision(video_preds, video_gts, num_classes, eval_cfg)


def teacher_infer_fn(teacher: TeacherBundle, cfg: ExperimentConfig):
    stride_sec = cfg.model.temporal_stride / cfg.data.spec.fps

    def infer(sample: VideoSample) -> PredictionSet:
        motion = motion_input(sample, teacher.modality)
        with torch.no_grad():
            raw = teacher.head(teacher.backbone(torch.as_tensor(motion.maps)))
        preds = decode(raw, stride_sec, sample.annotation.duration)
        return nms(preds, cfg.model.nms_iou, cfg.model.nms_top_k)

    return infer


def train_teacher(cfg: ExperimentConfig, run_seed: int, out_dir: str | Path) -> Path:
    """Train the motion model to serve as the distillation teacher."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(1)
    torch.manual_seed(_derive_seed(run_seed, "teacher"))

    bb_cfg = cfg.teacher_backbone_config()
    backbone = VideoEncoder(bb_cfg)
    head = DetectionHead(bb_cfg.feat_dim, cfg.data.spec.num_classes, hidden=cfg.model.head_hidden)
    params = list(backbone.parameters()) + list(head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.optim.learning_rate)
    stride_sec = bb_cfg.temporal_stride / cfg.data.spec.fps

    train = build_split(cfg, "train", run_seed, with_motion=True)
    val = build_split(cfg, "val", run_seed, with_motion=True)
    weights = cfg.loss
    student_cfg = cfg.student_config()
    order_rng = np.random.default_rng(_derive_seed(run_seed, "teacher-order"))

    history = []
    for epoch in range(cfg.optim.epochs):
        perm = order_rng.permutation(len(train))
        epoch_loss = 0.0
        for b0 in range(0, len(perm), cfg.optim.batch_size):
            batch = perm[b0:b0 + cfg.optim.batch_size]
            opt.zero_grad()
            batch_loss = None
            for idx in batch:
                ex = train[idx]
                ann = ex.sample.annotation
                raw = head(backbone(torch.as_tensor(ex.motion.maps)))
                preds = assign(decode(raw, stride_sec, ann.duration), ann, student_cfg.assign, stride_sec)
                total, _ = detection_loss(raw, preds, weights, stride_sec)
                batch_loss = total if batch_loss is None else batch_loss + total
            batch_loss = batch_loss / len(batch)
            _check_finite(batch_loss, f"teacher epoch {epoch}",
                          {"epoch": epoch, "lr": cfg.optim.learning_rate})
            batch_loss.backward()
            opt.step()
            epoch_loss += batch_loss.item() * len(batch)
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(train)})

    teacher = TeacherBundle(backbone, head, cfg.model.teacher_modality)
    infer = teacher_infer_fn(teacher, cfg)
    train_report = _evaluate_preds(infer, train, cfg.data.spec.num_classes, cfg.eval)
    val_report = _evaluate_preds(infer, val, cfg.data.spec.num_classes, cfg.eval)

    ckpt_path = out_dir / f"teacher_seed{run_seed}.ckpt"
    save_teacher(ckpt_path, teacher)
    report = {
        "seed": run_seed,
        "modality": cfg.model.teacher_modality,
        "train_map": train_report,
        "val_map": val_report,
        "history": history,
    }
    (out_dir / f"teacher_seed{run_seed}_report.json").write_text(json.dumps(report, indent=1))
    return ckpt_path


def train_student(
    cfg: ExperimentConfig,
    run_seed: int,
    out_dir: str | Path,
    teacher_path: str | Path | None = None,
    preset: str | None = None,
) -> Path:
    """Train one student arm; persists the best-validation checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preset = preset or cfg.model.preset
    torch.set_num_threads(1)
    torch.manual_seed(_derive_seed(run_seed, f"student-{preset}"))

    needs_teacher = preset in DISTILL_PRESETS
    teacher = None
    if needs_teacher:
        if teacher_path is None or not Path(teacher_path).exists():
            raise PreconditionError(f"preset {preset!r} requires a teacher checkpoint, got {teacher_path}")
        teacher = load_teacher(teacher_path)

    model = StudentModel(cfg.student_config(preset))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.optim.learning_rate)

    train = build_split(cfg, "train", run_seed, with_motion=needs_teacher)
    val = build_split(cfg, "val", run_seed, with_motion=False)
    weights = cfg.loss
    order_rng = np.random.default_rng(_derive_seed(run_seed, f"student-order-{preset}"))

    def val_map() -> float:
        model.eval()
        report = _evaluate_preds(
            lambda s: model.forward_infer(s.frames, s.fps, s.annotation.duration),
            val, cfg.data.spec.num_classes, cfg.eval,
        )
        model.train()
        return report["avg"]

    history = []
    best = {"avg": -1.0, "state": None, "epoch": -1}
    for epoch in range(cfg.optim.epochs):
        perm = order_rng.permutation(len(train))
        comp_sums: dict[str, float] = {}
        epoch_loss = 0.0
        for b0 in range(0, len(perm), cfg.optim.batch_size):
            batch = perm[b0:b0 + cfg.optim.batch_size]
            opt.zero_grad()
            batch_loss = None
            for idx in batch:
                ex = train[idx]
                total, comps = model.forward_train(ex.sample, ex.motion, teacher, weights)
                for k, v in comps.items():
                    comp_sums[k] = comp_sums.get(k, 0.0) + v.item()
                batch_loss = total if batch_loss is None else batch_loss + total
            batch_loss = batch_loss / len(batch)
            _check_finite(batch_loss, f"student {preset} epoch {epoch}",
                          {"epoch": epoch, "preset": preset, "lr": cfg.optim.learning_rate})
            batch_loss.backward()
            opt.step()
            epoch_loss += batch_loss.item() * len(batch)
        avg = val_map()
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / len(train),
            "val_avg_map": avg,
            "components": {k: v / len(train) for k, v in comp_sums.items()},
        })
        if avg > best["avg"]:
            best = {"avg": avg,
                    "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
                    "epoch": epoch}

    if best["state"] is not None:
        model.load_state_dict(best["state"])
    ckpt_path = out_dir / f"student_{preset}_seed{run_seed}.ckpt"
    save_student(ckpt_path, model, {"seed": run_seed, "best_val_avg_map": best["avg"],
                                    "best_epoch": best["epoch"]})
    log = {"preset": preset, "seed": run_seed, "history": history,
           "best_val_avg_map": best["avg"], "best_epoch": best["epoch"]}
    (out_dir / f"student_{preset}_seed{run_seed}_log.json").write_text(json.dumps(log, indent=1))
    _plot_history(history, out_dir / f"student_{preset}_seed{run_seed}_curves.png")
    return ckpt_path


def _plot_history(history: list[dict], path: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:  # plotting is best-effort
        return
    epochs = [h["epoch"] for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, [h["train_loss"] for h in history])
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    if history and "val_avg_map" in history[0]:
        ax2.plot(epochs, [h["val_avg_map"] for h in history])
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("val avg mAP")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def evaluate_checkpoint(
    cfg: ExperimentConfig, ckpt_path: str | Path, split: str, run_seed: int, out_dir: str | Path
) -> dict:
    """Score a trained student on a dataset split; writes a JSON report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, meta = load_student(ckpt_path)
    model.eval()
    examples = build_split(cfg, split, run_seed, with_motion=False)
    if not examples:
        raise PreconditionError(f"split {split!r} is empty")
    report = _evaluate_preds(
        lambda s: model.forward_infer(s.frames, s.fps, s.annotation.duration),
        examples, cfg.data.spec.num_classes, cfg.eval,
    )
    report["split"] = split
    report["checkpoint"] = str(ckpt_path)
    report["preset"] = meta.get("preset")
    out_path = out_dir / (Path(ckpt_path).stem + f"_eval_{split}.json")
    out_path.write_text(json.dumps(report, indent=1))
    return report


def run_ablation(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Train and score every preset at every seed; report the ordering."""
    if len(cfg.seeds) < 3:
        raise PreconditionError(f"ablation needs at least 3 seeds, got {len(cfg.seeds)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_preset: dict[str, list[dict]] = {p: [] for p in PRESETS}
    for seed in cfg.seeds:
        teacher_path = train_teacher(cfg, seed, out_dir)
        for preset in PRESETS:
            ckpt = train_student(cfg, seed, out_dir, teacher_path, preset)
            report = evaluate_checkpoint(cfg, ckpt, "test", seed, out_dir)
            per_preset[preset].append(report)

    thresholds = cfg.eval.tiou_thresholds
    summary_rows = {}
    stats = {}
    for preset in PRESETS:
        avgs = [r["avg"] for r in per_preset[preset]]
        mean = float(np.mean(avgs))
        sd = float(np.std(avgs, ddof=1)) if len(avgs) > 1 else 0.0
        stats[preset] = {"avg_map_per_seed": avgs, "mean": mean, "sd": sd}
        summary_rows[preset] = {
            "map_at_tiou": {
                f"{t:g}": float(np.mean([r["map_at_tiou"][f"{t:g}"] for r in per_preset[preset]]))
                for t in thresholds
            },
            "avg": mean,
        }

    means = {p: stats[p]["mean"] for p in PRESETS}
    ordering_ok = (
        means["decomposed_local_attn"] >= means["decomposed_concat"]
        >= means["conventional_distill"] >= means["rgb_baseline"]
    )
    # paired per-seed gap between the full method and the baseline
    diffs = [a - b for a, b in zip(stats["decomposed_local_attn"]["avg_map_per_seed"],
                                   stats["rgb_baseline"]["avg_map_per_seed"])]
    margin = float(np.mean(diffs))
    margin_sd = float(np.std(diffs, ddof=1)) if len(diffs) > 1 else 0.0
    verdict = {
        "ordering_holds": bool(ordering_ok),
        "margin_local_attn_vs_baseline": margin,
        "margin_sd": margin_sd,
        "margin_exceeds_2sd": bool(margin >= 2.0 * margin_sd),
    }

    table_text = format_map_table(summary_rows, thresholds)
    result = {"per_preset": stats, "summary": summary_rows, "verdict": verdict,
              "seeds": list(cfg.seeds)}
    (out_dir / "ablation.json").write_text(json.dumps(result, indent=1))
    (out_dir / "ablation.txt").write_text(table_text + "\n")
    return result
