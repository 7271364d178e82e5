"""Shared data model: annotations, predictions, loss weights.

All types are immutable value objects; they can be shared freely across
workers. Times are stored in seconds; the feature-grid stride converts
to and from timestep indices where needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping


@dataclass(frozen=True)
class ActionInstance:
    """A single ground-truth action interval with its class index."""

    start: float
    end: float
    label: int

    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class AnnotationSet:
    """All ground-truth instances of one untrimmed video."""

    video_id: str
    duration: float
    instances: tuple[ActionInstance, ...]

    @property
    def num_instances(self) -> int:
        return len(self.instances)


@dataclass(frozen=True)
class Prediction:
    """A decoded proposal: interval plus per-class sigmoid scores.

    Scores are independent per-class probabilities, not a softmax
    distribution; the background case is the all-zeros score vector.
    """

    start: float
    end: float
    scores: tuple[float, ...]
    source_timestep: int

    def is_valid(self) -> bool:
        return self.start < self.end and all(0.0 <= s <= 1.0 for s in self.scores)


@dataclass(frozen=True)
class PredictionSet:
    """Predictions of one video with a positive/negative partition.

    ``positive_idx`` and ``negative_idx`` must be disjoint and together
    cover every prediction index; each positive index maps to exactly
    one matched ground-truth instance. An unpartitioned set (fresh from
    decoding) has both index tuples empty.
    """

    predictions: tuple[Prediction, ...]
    positive_idx: tuple[int, ...] = ()
    negative_idx: tuple[int, ...] = ()
    matched_gt: Mapping[int, ActionInstance] = field(
        default_factory=lambda: MappingProxyType({})
    )

    def __post_init__(self):
        if isinstance(self.matched_gt, dict):
            object.__setattr__(self, "matched_gt", MappingProxyType(dict(self.matched_gt)))

    @property
    def is_partitioned(self) -> bool:
        return len(self.positive_idx) + len(self.negative_idx) == len(self.predictions)

    def check_partition(self) -> list[str]:
        """Return a list of partition-invariant violations (empty if ok)."""
        problems = []
        pos, neg = set(self.positive_idx), set(self.negative_idx)
        if pos & neg:
            problems.append(f"overlapping positive/negative indices: {sorted(pos & neg)}")
        all_idx = set(range(len(self.predictions)))
        if pos | neg != all_idx:
            problems.append(f"partition does not cover all indices: missing {sorted(all_idx - (pos | neg))}")
        unmatched = pos - set(self.matched_gt)
        if unmatched:
            problems.append(f"positives without a matched ground truth: {sorted(unmatched)}")
        extra = set(self.matched_gt) - pos
        if extra:
            problems.append(f"matched ground truths for non-positive indices: {sorted(extra)}")
        return problems


@dataclass(frozen=True)
class LossWeights:
    """Weights and hyperparameters of the training objectives."""

    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    lambda_comp: float = 1.0
    lambda_feat: float = 1.0
    alpha_p: float = 1.0
    alpha_n: float = 1.0
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_reg", "lambda_comp", "lambda_feat",
                     "alpha_p", "alpha_n", "focal_gamma", "smooth_l1_beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if self.smooth_l1_beta <= 0:
            raise ValueError(f"smooth_l1_beta must be > 0, got {self.smooth_l1_beta}")


def validate_annotations(ann: AnnotationSet, num_classes: int | None = None) -> list[str]:
    """Check every instance invariant; returns one entry per violation.

    Never raises: a validator reports, the caller decides.
    """
    violations = []
    if ann.duration <= 0 or not math.isfinite(ann.duration):
        violations.append(f"video duration must be positive and finite, got {ann.duration}")
    for i, inst in enumerate(ann.instances):
        if not (math.isfinite(inst.start) and math.isfinite(inst.end)):
            violations.append(f"instance {i}: non-finite boundary")
            continue
        if inst.start < 0:
            violations.append(f"instance {i}: start below 0")
        if inst.start == inst.end:
            violations.append(f"instance {i}: start==end")
        elif inst.start > inst.end:
            violations.append(f"instance {i}: start exceeds end")
        if inst.end > ann.duration:
            violations.append(f"instance {i}: end exceeds duration")
        if inst.label < 0:
            violations.append(f"instance {i}: negative class label")
        elif num_classes is not None and inst.label >= num_classes:
            violations.append(f"instance {i}: label {inst.label} outside [0, {num_classes})")
    return violations
