"""Experiment configuration: TOML/JSON files with fixed sections.

Recognized sections are [data], [model], [loss], [optim], [eval], plus
a top-level ``seeds`` list; unknown sections or keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backbone import BackboneConfig
from .head import AssignConfig
from .metrics import THUMOS_THRESHOLDS, EvalConfig
from .model import PRESETS, StudentConfig
from .synth import TEMPORAL_GRADIENT, SynthSpec
from .types import LossWeights

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Bad configuration file or option (CLI exit code 2)."""


class PreconditionError(RuntimeError):
    """An operation's precondition is not met (CLI exit code 4)."""


class TrainingDiverged(RuntimeError):
    """Non-finite training loss (CLI exit code 3)."""


@dataclass(frozen=True)
class DataConfig:
    spec: SynthSpec = field(default_factory=SynthSpec)
    n_train: int = 24
    n_val: int = 6
    n_test: int = 16


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "decomposed_local_attn"
    feat_dim: int = 16
    temporal_stride: int = 4
    depth: int = 2
    width: int = 8
    proj_dim: int = 8
    fusion_pool: str = "mean"
    teacher_modality: str = TEMPORAL_GRADIENT
    head_hidden: int = 32
    assign_mode: str = "center_inside"
    assign_iou: float = 0.5
    nms_iou: float = 0.4
    nms_top_k: int = 100


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 8


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: tuple[int, ...] = (1, 2, 3)

    def student_config(self, preset: str | None = None) -> StudentConfig:
        m = self.model
        return StudentConfig(
            preset=preset or m.preset,
            num_classes=self.data.spec.num_classes,
            backbone=BackboneConfig(
                in_channels=3,
                feat_dim=m.feat_dim,
                temporal_stride=m.temporal_stride,
                depth=m.depth,
                width=m.width,
            ),
            proj_dim=m.proj_dim,
            fusion_pool=m.fusion_pool,
            assign=AssignConfig(m.assign_mode, m.assign_iou),
            nms_iou=m.nms_iou,
            nms_top_k=m.nms_top_k,
        )

    def teacher_backbone_config(self) -> BackboneConfig:
        in_ch = 3 if self.model.teacher_modality == TEMPORAL_GRADIENT else 2
        # the teacher's feature width must equal the student's projection
        # dimension so backbone features can be matched directly
        return BackboneConfig(
            in_channels=in_ch,
            feat_dim=self.model.proj_dim,
            temporal_stride=self.model.temporal_stride,
            depth=self.model.depth,
            width=self.model.width,
        )


_SECTION_KEYS = {
    "data": {"duration_range", "instances_range", "num_classes", "cue_mode", "noise_level",
             "height", "width", "fps", "seed", "n_train", "n_val", "n_test"},
    "model": {f.name for f in fields(ModelConfig)},
    "loss": {f.name for f in fields(LossWeights)},
    "optim": {f.name for f in fields(OptimConfig)},
    "eval": {"tiou_thresholds"},
}


def _check_keys(section: str, payload: dict) -> None:
    unknown = set(payload) - _SECTION_KEYS[section]
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")


def parse_config(payload: dict) -> ExperimentConfig:
    unknown = set(payload) - {"data", "model", "loss", "optim", "eval", "seeds"}
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")
    try:
        data_raw = dict(payload.get("data", {}))
        _check_keys("data", data_raw)
        split_sizes = {k: data_raw.pop(k) for k in ("n_train", "n_val", "n_test") if k in data_raw}
        for key in ("duration_range", "instances_range"):
            if key in data_raw:
                data_raw[key] = tuple(data_raw[key])
        data = DataConfig(spec=SynthSpec(**data_raw), **split_sizes)

        model_raw = dict(payload.get("model", {}))
        _check_keys("model", model_raw)
        model = ModelConfig(**model_raw)
        if model.preset not in PRESETS:
            raise ConfigError(f"unknown preset {model.preset!r}, expected one of {PRESETS}")

        loss_raw = dict(payload.get("loss", {}))
        _check_keys("loss", loss_raw)
        loss = LossWeights(**loss_raw)

        optim_raw = dict(payload.get("optim", {}))
        _check_keys("optim", optim_raw)
        optim = OptimConfig(**optim_raw)

        eval_raw = dict(payload.get("eval", {}))
        _check_keys("eval", eval_raw)
        eval_cfg = EvalConfig(tuple(eval_raw.get("tiou_thresholds", THUMOS_THRESHOLDS)))

        seeds = tuple(int(s) for s in payload.get("seeds", (1, 2, 3)))
        if not seeds:
            raise ConfigError("seeds must be nonempty")
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return ExperimentConfig(data, model, loss, optim, eval_cfg, seeds)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
    elif path.suffix == ".toml":
        try:
            payload = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: invalid TOML: {e}") from e
    else:
        raise ConfigError(f"{path}: expected a .toml or .json config file")
    return parse_config(payload)
