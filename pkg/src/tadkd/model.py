"""The full student detector and its ablation presets.

Presets (one per comparison arm):
  rgb_baseline         backbone -> detection head, supervised only
  conventional_distill single pathway, detection loss + direct distillation
  decomposed_concat    dual branch, shared branch head, concat fusion
  decomposed_local_attn dual branch plus local attentive fusion

The two decomposed branches run through ONE shared detection head
instance (a single parameter storage, not copies). Inference uses only
the RGB pathway into the joint head; branch heads are kept in the
checkpoint but never executed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import BackboneConfig, VideoEncoder
from .distill import TeacherBundle, loss_feature, response_components, teacher_forward
from .fusion import BranchProjections, LocalAttentiveFusion, baseline_fuse
from .head import AssignConfig, DetectionHead, RawHeadOutput, assign, decode, detection_loss, nms
from .io import load_checkpoint, save_checkpoint
from .synth import MotionMaps, VideoSample
from .types import LossWeights, PredictionSet

PRESETS = ("rgb_baseline", "conventional_distill", "decomposed_concat", "decomposed_local_attn")
DISTILL_PRESETS = PRESETS[1:]


@dataclass(frozen=True)
class StudentConfig:
    preset: str = "decomposed_local_attn"
    num_classes: int = 4
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    proj_dim: int = 8
    fusion_pool: str = "mean"
    assign: AssignConfig = field(default_factory=AssignConfig)
    nms_iou: float = 0.4
    nms_top_k: int = 100
    # optional teacher-confidence mask for the response loss (off by default)
    response_mask_threshold: float | None = None
    # stop-gradient switches for studying per-loss backbone interaction
    stop_grad: tuple[str, ...] = ()

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}, expected one of {PRESETS}")
        if self.proj_dim < 1:
            raise ValueError("proj_dim must be positive")
        unknown = set(self.stop_grad) - {"app", "distill", "joint"}
        if unknown:
            raise ValueError(f"unknown stop_grad entries {sorted(unknown)}")


class StudentModel(nn.Module):
    def __init__(self, config: StudentConfig):
        super().__init__()
        self.config = config
        self.backbone = VideoEncoder(config.backbone)
        c_feat = config.backbone.feat_dim
        d = config.proj_dim
        if config.preset == "rgb_baseline":
            self.head = DetectionHead(c_feat, config.num_classes)
        elif config.preset == "conventional_distill":
            self.head = DetectionHead(c_feat, config.num_classes)
            # adaptation layer easing the feature match against the teacher
            self.adapt = nn.Conv1d(c_feat, d, kernel_size=1)
        else:
            self.projections = BranchProjections(c_feat, d)
            self.branch_head = DetectionHead(d, config.num_classes)
            joint_in = 2 * d
            self.joint_head = DetectionHead(joint_in, config.num_classes)
            if config.preset == "decomposed_local_attn":
                self.fusion = LocalAttentiveFusion(d, config.fusion_pool)

    @property
    def stride_sec_factor(self) -> int:
        return self.config.backbone.temporal_stride

    def _adapted(self, z: torch.Tensor) -> torch.Tensor:
        return self.adapt(z.transpose(0, 1).unsqueeze(0)).squeeze(0).transpose(0, 1)

    def _fuse(self, f_app: torch.Tensor, f_mot: torch.Tensor) -> torch.Tensor:
        if self.config.preset == "decomposed_local_attn":
            return self.fusion(f_app, f_mot)
        return baseline_fuse(f_app, f_mot, "concat")

    def joint_raw(self, frames: torch.Tensor) -> RawHeadOutput:
        """The RGB-only inference pathway, also reused inside training."""
        z = self.backbone(frames)
        if self.config.preset in ("rgb_baseline", "conventional_distill"):
            return self.head(z)
        f_app, f_mot = self.projections(z)
        return self.joint_head(self._fuse(f_app, f_mot))

    def forward_train(
        self,
        sample: VideoSample,
        motion: MotionMaps | None,
        teacher: TeacherBundle | None,
        weights: LossWeights,
    ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        """Total training loss and the per-component breakdown for one video."""
        cfg = self.config
        frames = torch.as_tensor(sample.frames)
        fps, ann = sample.fps, sample.annotation
        stride_sec = self.stride_sec_factor / fps
        z = self.backbone(frames)

        needs_teacher = cfg.preset in DISTILL_PRESETS
        if needs_teacher:
            if teacher is None or motion is None:
                raise ValueError(f"preset {cfg.preset!r} requires a teacher and motion input")
            t_out = teacher_forward(motion, teacher, fps, ann.duration)
            if t_out.features.shape[0] != z.shape[0]:
                raise ValueError(
                    f"teacher grid length {t_out.features.shape[0]} != student {z.shape[0]}; "
                    "teacher and student must share the temporal stride"
                )

        def maybe_detach(t: torch.Tensor, key: str) -> torch.Tensor:
            return t.detach() if key in cfg.stop_grad else t

        components: dict[str, torch.Tensor] = {}
        if cfg.preset == "rgb_baseline":
            raw = self.head(z)
            preds = assign(decode(raw, stride_sec, ann.duration), ann, cfg.assign, stride_sec)
            total, parts = detection_loss(raw, preds, weights, stride_sec)
            components.update(parts)
            return total, components

        if cfg.preset == "conventional_distill":
            raw = self.head(maybe_detach(z, "app"))
            preds = assign(decode(raw, stride_sec, ann.duration), ann, cfg.assign, stride_sec)
            det_total, parts = detection_loss(raw, preds, weights, stride_sec)
            components.update(parts)
            resp = response_components(raw, t_out.raw, weights, cfg.response_mask_threshold)
            components.update(resp)
            components["feat"] = loss_feature(self._adapted(maybe_detach(z, "distill")), t_out.features)
            distill_total = (
                weights.lambda_cls * resp["respon_cls"]
                + weights.lambda_reg * resp["respon_reg"]
                + weights.lambda_feat * components["feat"]
            )
            return det_total + distill_total, components

        # decomposed presets
        f_app, f_mot = self.projections(z)
        app_raw = self.branch_head(maybe_detach(f_app, "app"))
        preds = assign(decode(app_raw, stride_sec, ann.duration), ann, cfg.assign, stride_sec)
        l_app, app_parts = detection_loss(app_raw, preds, weights, stride_sec)
        components.update({f"app_{k}": v for k, v in app_parts.items()})

        mot_raw = self.branch_head(maybe_detach(f_mot, "distill"))
        resp = response_components(mot_raw, t_out.raw, weights, cfg.response_mask_threshold)
        components.update(resp)
        components["feat"] = loss_feature(maybe_detach(f_mot, "distill"), t_out.features)
        l_distill = (
            weights.lambda_cls * resp["respon_cls"]
            + weights.lambda_reg * resp["respon_reg"]
            + weights.lambda_feat * components["feat"]
        )

        joint_raw = self.joint_head(self._fuse(maybe_detach(f_app, "joint"), maybe_detach(f_mot, "joint")))
        l_joint, joint_parts = detection_loss(joint_raw, preds, weights, stride_sec)
        components.update({f"joint_{k}": v for k, v in joint_parts.items()})

        return l_app + l_distill + l_joint, components

    @torch.no_grad()
    def forward_infer(self, frames: np.ndarray | torch.Tensor, fps: float, duration: float) -> PredictionSet:
        """RGB-only inference: encode, fuse, joint head, decode, NMS."""
        raw = self.joint_raw(torch.as_tensor(frames))
        preds = decode(raw, self.stride_sec_factor / fps, duration)
        return nms(preds, self.config.nms_iou, self.config.nms_top_k)


def save_student(path: str | Path, model: StudentModel, extra_metadata: dict | None = None) -> None:
    cfg = model.config
    bb = cfg.backbone
    meta = {
        "preset": cfg.preset,
        "num_classes": cfg.num_classes,
        "proj_dim": cfg.proj_dim,
        "fusion_pool": cfg.fusion_pool,
        "assign_mode": cfg.assign.mode,
        "assign_iou": cfg.assign.iou_pos_threshold,
        "nms_iou": cfg.nms_iou,
        "nms_top_k": cfg.nms_top_k,
        "backbone": {
            "in_channels": bb.in_channels,
            "feat_dim": bb.feat_dim,
            "temporal_stride": bb.temporal_stride,
            "depth": bb.depth,
            "width": bb.width,
        },
    }
    if extra_metadata:
        meta.update(extra_metadata)
    tensors = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    save_checkpoint(path, tensors, meta)


def load_student(path: str | Path) -> tuple[StudentModel, dict]:
    tensors, meta = load_checkpoint(path)
    config = StudentConfig(
        preset=meta["preset"],
        num_classes=meta["num_classes"],
        backbone=BackboneConfig(**meta["backbone"]),
        proj_dim=meta["proj_dim"],
        fusion_pool=meta["fusion_pool"],
        assign=AssignConfig(meta["assign_mode"], meta["assign_iou"]),
        nms_iou=meta["nms_iou"],
        nms_top_k=meta["nms_top_k"],
    )
    model = StudentModel(config)
    model.load_state_dict({name: torch.from_numpy(arr) for name, arr in tensors.items()})
    return model, meta
