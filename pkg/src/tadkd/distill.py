"""Frozen motion teacher and the two distillation losses.

The response loss treats the teacher's per-timestep outputs as soft
pseudo-ground-truths over ALL predictions (not only positives); the
feature loss matches the student's motion-projected features against
the teacher's backbone features. Teacher outputs are always detached.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import torch

from .backbone import BackboneConfig, VideoEncoder
from .head import DetectionHead, RawHeadOutput, decode, focal_binary, smooth_l1
from .io import load_checkpoint, save_checkpoint
from .synth import MotionMaps
from .types import LossWeights, PredictionSet


@dataclass(frozen=True)
class TeacherBundle:
    """A trained motion model with frozen parameters."""

    backbone: VideoEncoder
    head: DetectionHead
    modality: str

    def __post_init__(self):
        self.backbone.requires_grad_(False)
        self.head.requires_grad_(False)
        self.backbone.eval()
        self.head.eval()

    @property
    def stride(self) -> int:
        return self.backbone.config.temporal_stride


class TeacherOutput(NamedTuple):
    features: torch.Tensor  # z_mot, (T', C_feat), detached
    raw: RawHeadOutput  # detached logits/offsets
    predictions: PredictionSet


def teacher_forward(motion: MotionMaps, teacher: TeacherBundle, fps: float, duration: float) -> TeacherOutput:
    """Run the frozen teacher on a motion input; everything is detached."""
    if motion.kind != teacher.modality:
        raise ValueError(f"teacher expects {teacher.modality!r} input, got {motion.kind!r}")
    with torch.no_grad():
        z = teacher.backbone(torch.as_tensor(motion.maps))
        raw = teacher.head(z)
    raw = RawHeadOutput(raw.cls_logits.detach(), raw.offsets.detach())
    preds = decode(raw, teacher.stride / fps, duration)
    return TeacherOutput(z.detach(), raw, preds)


def loss_response(
    student_raw: RawHeadOutput,
    teacher_raw: RawHeadOutput,
    weights: LossWeights,
    confidence_mask: float | None = None,
) -> torch.Tensor:
    """Response distillation: focal loss against the teacher's soft scores
    plus smooth-L1 against the teacher's offsets, averaged over all timesteps."""
    if student_raw.cls_logits.shape != teacher_raw.cls_logits.shape:
        raise ValueError(
            f"classification shape mismatch: student {tuple(student_raw.cls_logits.shape)} "
            f"vs teacher {tuple(teacher_raw.cls_logits.shape)}"
        )
    if student_raw.offsets.shape != teacher_raw.offsets.shape:
        raise ValueError(
            f"offset shape mismatch: student {tuple(student_raw.offsets.shape)} "
            f"vs teacher {tuple(teacher_raw.offsets.shape)}"
        )
    parts = response_components(student_raw, teacher_raw, weights, confidence_mask)
    return weights.lambda_cls * parts["respon_cls"] + weights.lambda_reg * parts["respon_reg"]


def response_components(
    student_raw: RawHeadOutput,
    teacher_raw: RawHeadOutput,
    weights: LossWeights,
    confidence_mask: float | None = None,
) -> dict[str, torch.Tensor]:
    """Unweighted response terms, for per-component logging.

    With ``confidence_mask`` set, timesteps whose teacher peak score
    falls below the threshold are excluded from both terms (experiment
    flag; off by default, so all predictions participate).
    """
    soft_targets = torch.sigmoid(teacher_raw.cls_logits).detach()
    s_logits, s_offsets = student_raw.cls_logits, student_raw.offsets
    t_offsets = teacher_raw.offsets.detach()
    if confidence_mask is not None:
        keep = soft_targets.max(dim=-1).values >= confidence_mask
        if not keep.any():
            zero = s_logits.new_zeros(())
            return {"respon_cls": zero, "respon_reg": zero.clone()}
        s_logits, soft_targets = s_logits[keep], soft_targets[keep]
        s_offsets, t_offsets = s_offsets[keep], t_offsets[keep]
    return {
        "respon_cls": focal_binary(s_logits, soft_targets, weights.focal_gamma).mean(),
        "respon_reg": smooth_l1(s_offsets - t_offsets, weights.smooth_l1_beta).mean(),
    }


def loss_feature(z_rgb_projected: torch.Tensor, z_mot: torch.Tensor) -> torch.Tensor:
    """Mean over timesteps of the squared L2 feature gap; teacher detached."""
    if z_rgb_projected.shape != z_mot.shape:
        raise ValueError(
            f"feature shape mismatch: projected {tuple(z_rgb_projected.shape)} "
            f"vs teacher {tuple(z_mot.shape)}"
        )
    diff = z_rgb_projected - z_mot.detach()
    return (diff ** 2).sum(dim=-1).mean()


def distill_loss(response: torch.Tensor, feature: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return response + weights.lambda_feat * feature


def save_teacher(path: str | Path, teacher: TeacherBundle) -> None:
    tensors = {}
    for prefix, module in (("backbone", teacher.backbone), ("head", teacher.head)):
        for name, p in module.state_dict().items():
            tensors[f"{prefix}.{name}"] = p.detach().cpu().numpy()
    cfg = teacher.backbone.config
    meta = {
        "modality": teacher.modality,
        "backbone": {
            "in_channels": cfg.in_channels,
            "feat_dim": cfg.feat_dim,
            "temporal_stride": cfg.temporal_stride,
            "depth": cfg.depth,
            "width": cfg.width,
        },
        "num_classes": teacher.head.num_classes,
        "head_hidden": teacher.head.hidden,
    }
    save_checkpoint(path, tensors, meta)


def load_teacher(path: str | Path) -> TeacherBundle:
    tensors, meta = load_checkpoint(path)
    cfg = BackboneConfig(**meta["backbone"])
    backbone = VideoEncoder(cfg)
    head = DetectionHead(cfg.feat_dim, meta["num_classes"], hidden=meta.get("head_hidden", 32))
    for prefix, module in (("backbone", backbone), ("head", head)):
        state = {
            name[len(prefix) + 1:]: torch.from_numpy(arr)
            for name, arr in tensors.items()
            if name.startswith(prefix + ".")
        }
        module.load_state_dict(state)
    return TeacherBundle(backbone, head, meta["modality"])
