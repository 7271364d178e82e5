"""Anchor-free detection head.

One prediction per feature timestep: per-class sigmoid logits plus
nonnegative (softplus-mapped) distances from the timestep to the
interval start and end, in feature-grid units. The grid-to-seconds
conversion is a single scalar ``stride_sec = r_T / fps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .metrics import tiou
from .types import ActionInstance, AnnotationSet, LossWeights, Prediction, PredictionSet

CENTER_INSIDE = "center_inside"
IOU_THRESHOLD = "iou_threshold"


@dataclass(frozen=True)
class RawHeadOutput:
    """Pre-decode head output: logits (T', C_cls) and offsets (T', 2) >= 0."""

    cls_logits: torch.Tensor
    offsets: torch.Tensor

    @property
    def num_timesteps(self) -> int:
        return self.cls_logits.shape[0]

    @property
    def num_classes(self) -> int:
        return self.cls_logits.shape[1]


@dataclass(frozen=True)
class AssignConfig:
    mode: str = CENTER_INSIDE
    iou_pos_threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in (CENTER_INSIDE, IOU_THRESHOLD):
            raise ValueError(f"unknown assignment mode {self.mode!r}")
        if not (0.0 < self.iou_pos_threshold <= 1.0):
            raise ValueError(f"iou_pos_threshold must be in (0,1], got {self.iou_pos_threshold}")


class DetectionHead(nn.Module):
    """Two 1D-conv towers over the feature sequence: classify and regress."""

    def __init__(self, in_dim: int, num_classes: int, hidden: int = 32, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.cls_tower = nn.Sequential(
            nn.Conv1d(in_dim, hidden, kernel_size, padding=pad),
            nn.ReLU(),
            nn.Conv1d(hidden, num_classes, kernel_size, padding=pad),
        )
        self.reg_tower = nn.Sequential(
            nn.Conv1d(in_dim, hidden, kernel_size, padding=pad),
            nn.ReLU(),
            nn.Conv1d(hidden, 2, kernel_size, padding=pad),
        )
        self.num_classes = num_classes
        self.hidden = hidden

    def forward(self, z: torch.Tensor) -> RawHeadOutput:
        """z: (T', in_dim) feature sequence."""
        x = z.transpose(0, 1).unsqueeze(0)  # (1, C, T')
        logits = self.cls_tower(x).squeeze(0).transpose(0, 1)
        offsets = F.softplus(self.reg_tower(x)).squeeze(0).transpose(0, 1)
        return RawHeadOutput(logits, offsets)


def decode(raw: RawHeadOutput, stride_sec: float, duration: float) -> PredictionSet:
    """Turn raw outputs into one proposal per timestep (partition empty).

    Prediction n sits at timestep n: start = (n - d_s[n]) * stride_sec,
    end = (n + d_e[n]) * stride_sec, clamped to [0, duration]; scores
    are per-class sigmoids.
    """
    with torch.no_grad():
        scores = torch.sigmoid(raw.cls_logits).cpu().numpy()
        offs = raw.offsets.cpu().numpy()
    preds = []
    for t in range(raw.num_timesteps):
        start = max(0.0, (t - float(offs[t, 0])) * stride_sec)
        end = min(duration, (t + float(offs[t, 1])) * stride_sec)
        preds.append(Prediction(start, end, tuple(float(s) for s in scores[t]), t))
    return PredictionSet(tuple(preds))


def assign(preds: PredictionSet, gt: AnnotationSet, cfg: AssignConfig, stride_sec: float) -> PredictionSet:
    """Fill the positive/negative partition of a decoded prediction set.

    center_inside: a timestep is positive iff its time lies inside at
    least one ground-truth interval; match the shortest containing
    instance (ties: earliest start). iou_threshold: positive iff the
    best tIoU with any instance reaches the configured threshold; match
    the argmax instance.
    """
    pos, neg, matched = [], [], {}
    for n, p in enumerate(preds.predictions):
        best: ActionInstance | None = None
        if cfg.mode == CENTER_INSIDE:
            t_time = p.source_timestep * stride_sec
            for inst in gt.instances:
                if inst.start <= t_time < inst.end:
                    if best is None or (inst.duration(), inst.start) < (best.duration(), best.start):
                        best = inst
        else:
            best_iou = 0.0
            for inst in gt.instances:
                if not p.start < p.end:
                    continue
                v = tiou((p.start, p.end), (inst.start, inst.end))
                if v > best_iou:
                    best_iou, best = v, inst
            if best_iou < cfg.iou_pos_threshold:
                best = None
        if best is None:
            neg.append(n)
        else:
            pos.append(n)
            matched[n] = best
    return PredictionSet(preds.predictions, tuple(pos), tuple(neg), matched)


def focal_binary(logits: torch.Tensor, targets: torch.Tensor, gamma: float) -> torch.Tensor:
    """Per-prediction focal binary cross-entropy, summed over classes.

    Accepts soft targets q in [0, 1]; per class the term is
    -[q (1-p)^gamma log p + (1-q) p^gamma log(1-p)], which reduces to
    the standard hard focal loss for q in {0, 1}.
    """
    p = torch.sigmoid(logits)
    log_p = F.logsigmoid(logits)
    log_1mp = F.logsigmoid(-logits)
    per_class = -(targets * (1 - p) ** gamma * log_p + (1 - targets) * p ** gamma * log_1mp)
    return per_class.sum(dim=-1)


def smooth_l1(diff: torch.Tensor, beta: float) -> torch.Tensor:
    """Elementwise smooth-L1: quadratic inside |d| < beta, linear outside."""
    ad = diff.abs()
    return torch.where(ad < beta, 0.5 * ad ** 2 / beta, ad - 0.5 * beta)


def _gt_grid_offsets(preds: PredictionSet, stride_sec: float, dtype, device) -> torch.Tensor:
    """Ground-truth (d_s, d_e) in grid units for each positive timestep."""
    rows = []
    for n in preds.positive_idx:
        t = preds.predictions[n].source_timestep
        g = preds.matched_gt[n]
        rows.append((t - g.start / stride_sec, g.end / stride_sec - t))
    return torch.tensor(rows, dtype=dtype, device=device)


def loss_cls(raw: RawHeadOutput, preds: PredictionSet, weights: LossWeights) -> torch.Tensor:
    """Focal classification loss, normalized per positive/negative set.

    Positives target their matched instance's one-hot vector; negatives
    target the all-zeros (background) vector. Either term vanishes when
    its set is empty.
    """
    logits = raw.cls_logits
    total = logits.new_zeros(())
    if preds.positive_idx:
        idx = list(preds.positive_idx)
        targets = torch.zeros(len(idx), raw.num_classes, dtype=logits.dtype, device=logits.device)
        for k, n in enumerate(idx):
            targets[k, preds.matched_gt[n].label] = 1.0
        total = total + weights.alpha_p * focal_binary(logits[idx], targets, weights.focal_gamma).mean()
    if preds.negative_idx:
        idx = list(preds.negative_idx)
        targets = torch.zeros(len(idx), raw.num_classes, dtype=logits.dtype, device=logits.device)
        total = total + weights.alpha_n * focal_binary(logits[idx], targets, weights.focal_gamma).mean()
    return total


def loss_reg(raw: RawHeadOutput, preds: PredictionSet, weights: LossWeights, stride_sec: float) -> torch.Tensor:
    """Smooth-L1 between predicted and ground-truth offsets, positives only."""
    if not preds.positive_idx:
        return raw.offsets.new_zeros(())
    idx = list(preds.positive_idx)
    gt = _gt_grid_offsets(preds, stride_sec, raw.offsets.dtype, raw.offsets.device)
    return smooth_l1(raw.offsets[idx] - gt, weights.smooth_l1_beta).mean()


def loss_comp(raw: RawHeadOutput, preds: PredictionSet, stride_sec: float) -> torch.Tensor:
    """Mean (1 - tIoU) between positive proposals and their matches."""
    if not preds.positive_idx:
        return raw.offsets.new_zeros(())
    terms = []
    for n in preds.positive_idx:
        t = preds.predictions[n].source_timestep
        g = preds.matched_gt[n]
        pred_iv = (t - raw.offsets[n, 0], t + raw.offsets[n, 1])
        gt_iv = (g.start / stride_sec, g.end / stride_sec)
        terms.append(1.0 - tiou(pred_iv, gt_iv))
    return torch.stack(terms).mean()


def detection_loss(
    raw: RawHeadOutput, preds: PredictionSet, weights: LossWeights, stride_sec: float
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted sum of the classification, regression and completeness losses."""
    parts = {
        "cls": loss_cls(raw, preds, weights),
        "reg": loss_reg(raw, preds, weights, stride_sec),
        "comp": loss_comp(raw, preds, stride_sec),
    }
    total = (
        weights.lambda_cls * parts["cls"]
        + weights.lambda_reg * parts["reg"]
        + weights.lambda_comp * parts["comp"]
    )
    return total, parts


def nms(preds: PredictionSet, iou_thresh: float = 0.4, top_k: int = 100) -> PredictionSet:
    """Class-wise greedy suppression; keeps up to top_k, sorted by score.

    Each survivor carries a score vector that is zero except for the
    class it survived in, so downstream per-class pooling stays exact.
    Degenerate (empty-interval) proposals are dropped first.
    """
    valid = [p for p in preds.predictions if p.start < p.end]
    if not valid:
        return PredictionSet(())
    num_classes = len(valid[0].scores)
    kept: list[tuple[float, Prediction]] = []
    for c in range(num_classes):
        order = sorted(valid, key=lambda p: (-p.scores[c], p.start))
        chosen: list[Prediction] = []
        for p in order:
            if any(tiou((p.start, p.end), (q.start, q.end)) > iou_thresh for q in chosen):
                continue
            chosen.append(p)
        for p in chosen:
            masked = tuple(p.scores[c] if k == c else 0.0 for k in range(num_classes))
            kept.append((p.scores[c], Prediction(p.start, p.end, masked, p.source_timestep)))
    kept.sort(key=lambda sp: (-sp[0], sp[1].start))
    return PredictionSet(tuple(p for _, p in kept[:top_k]))
