"""Synthetic untrimmed videos with controllable appearance/motion cues.

Each action instance renders a square patch over a static noisy
background. Depending on the cue mode, the patch carries a
class-specific color (appearance cue), a class-specific constant
velocity (motion cue, wrap-around movement), or both. Per-frame patch
positions are recorded so the ground-truth displacement field (the
synthetic optical-flow stand-in) can be read back exactly.

Generation is a pure function of (spec, seed): same inputs, bitwise
identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .types import ActionInstance, AnnotationSet

TEMPORAL_GRADIENT = "temporal_gradient"
SYNTHETIC_FLOW = "synthetic_flow"
CUE_MODES = ("appearance_only", "motion_only", "both")

# Integer km/frame velocities keep rendered movement and recorded flow exact.
_VELOCITIES = ((1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (2, 0), (0, 2))
_NEUTRAL_COLOR = (0.85, 0.85, 0.85)

_MIN_INSTANCE_SECONDS = 2.0
_MIN_GAP_SECONDS = 0.5


def _class_color(label: int, num_classes: int) -> tuple[float, float, float]:
    # evenly spaced hues at full saturation, kept inside [0.15, 1.0]
    h = (label / num_classes) * 6.0
    x = 1.0 - abs(h % 2.0 - 1.0)
    sector = [(1, x, 0), (x, 1, 0), (0, 1, x), (0, x, 1), (x, 0, 1), (1, 0, x)][int(h) % 6]
    return tuple(0.15 + 0.85 * v for v in sector)


@dataclass(frozen=True)
class MotionRecord:
    """Per-instance movement trace: enough to reconstruct the flow field."""

    frame_start: int
    frame_end: int  # exclusive
    velocity: tuple[int, int]  # (dx, dy) in pixels per frame
    positions: tuple[tuple[int, int], ...]  # (row, col) top-left per frame
    patch_size: int


@dataclass(frozen=True)
class VideoSample:
    """RGB frames (T, 3, H, W) in [0, 1] plus annotation and movement traces."""

    frames: np.ndarray
    fps: float
    annotation: AnnotationSet
    motion_records: tuple[MotionRecord, ...] | None = None


@dataclass(frozen=True)
class MotionMaps:
    """Derived motion modality: 3-channel temporal gradient or 2-channel flow."""

    kind: str
    maps: np.ndarray

    @property
    def channels(self) -> int:
        return self.maps.shape[1]


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic benchmark."""

    duration_range: tuple[float, float] = (24.0, 64.0)
    instances_range: tuple[int, int] = (3, 8)
    num_classes: int = 4
    cue_mode: str = "both"
    noise_level: float = 0.02
    height: int = 32
    width: int = 32
    fps: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.cue_mode not in CUE_MODES:
            raise ValueError(f"cue_mode must be one of {CUE_MODES}, got {self.cue_mode!r}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.num_classes > len(_VELOCITIES):
            raise ValueError(
                f"at most {len(_VELOCITIES)} classes supported "
                f"(distinct motion patterns), got {self.num_classes}"
            )
        if self.duration_range[0] > self.duration_range[1] or self.duration_range[0] <= 0:
            raise ValueError(f"empty duration range {self.duration_range}")
        if self.instances_range[0] > self.instances_range[1] or self.instances_range[0] < 0:
            raise ValueError(f"empty instance-count range {self.instances_range}")
        if self.fps <= 0 or self.height < 8 or self.width < 8:
            raise ValueError("fps must be positive and frames at least 8x8")


def _cue_params(spec: SynthSpec, label: int):
    color = _NEUTRAL_COLOR if spec.cue_mode == "motion_only" else _class_color(label, spec.num_classes)
    velocity = (0, 0) if spec.cue_mode == "appearance_only" else _VELOCITIES[label]
    return color, velocity


def generate_video(spec: SynthSpec, seed: int) -> tuple[VideoSample, AnnotationSet]:
    """Render one untrimmed video and its annotation, deterministically."""
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, seed & 0xFFFFFFFF])
    h, w, fps = spec.height, spec.width, spec.fps

    t_min = int(round(spec.duration_range[0] * fps))
    t_max = int(round(spec.duration_range[1] * fps))
    num_frames = int(rng.integers(t_min, t_max + 1))
    duration = num_frames / fps
    n_inst = int(rng.integers(spec.instances_range[0], spec.instances_range[1] + 1))

    if n_inst > 0:
        slot = duration / n_inst
        if slot < _MIN_INSTANCE_SECONDS + _MIN_GAP_SECONDS:
            raise ValueError(
                f"cannot fit {n_inst} instances of at least {_MIN_INSTANCE_SECONDS}s "
                f"(plus {_MIN_GAP_SECONDS}s gaps) in a {duration:.1f}s video"
            )

    # background: fixed texture + small per-frame noise
    texture = rng.uniform(0.25, 0.75, size=(1, 3, h, w))
    frames = texture + rng.normal(0.0, spec.noise_level, size=(num_frames, 3, h, w))
    np.clip(frames, 0.0, 1.0, out=frames)
    frames = frames.astype(np.float32)

    patch = max(4, min(h, w) // 4)
    instances = []
    records = []
    for i in range(n_inst):
        slot_lo = i * slot
        length = rng.uniform(_MIN_INSTANCE_SECONDS, slot - _MIN_GAP_SECONDS)
        start = rng.uniform(slot_lo, slot_lo + slot - _MIN_GAP_SECONDS - length)
        f0 = int(round(start * fps))
        f1 = max(f0 + 2, int(round((start + length) * fps)))
        f1 = min(f1, num_frames)
        label = int(rng.integers(spec.num_classes))
        color, velocity = _cue_params(spec, label)
        r0 = int(rng.integers(h))
        c0 = int(rng.integers(w))

        positions = []
        col = np.asarray(color, dtype=np.float32)[:, None, None]
        for t in range(f0, f1):
            r = (r0 + velocity[1] * (t - f0)) % h
            c = (c0 + velocity[0] * (t - f0)) % w
            positions.append((r, c))
            rows = (np.arange(patch) + r) % h
            cols = (np.arange(patch) + c) % w
            frames[t][:, rows[:, None], cols[None, :]] = col
        instances.append(ActionInstance(f0 / fps, f1 / fps, label))
        records.append(MotionRecord(f0, f1, velocity, tuple(positions), patch))

    annotation = AnnotationSet(f"synth_{spec.seed}_{seed}", duration, tuple(instances))
    sample = VideoSample(frames, fps, annotation, tuple(records))
    return sample, annotation


def temporal_gradient(video: VideoSample) -> MotionMaps:
    """Signed frame difference; the first frame's map is all zeros."""
    frames = video.frames
    maps = np.zeros_like(frames)
    if frames.shape[0] > 1:
        maps[1:] = frames[1:] - frames[:-1]
    return MotionMaps(TEMPORAL_GRADIENT, maps)


def synthetic_flow(video: VideoSample) -> MotionMaps:
    """Ground-truth (dx, dy) displacement field of the moving patches.

    Flow at frame t is the displacement from frame t-1 to t, matching
    the temporal-gradient convention; zero wherever nothing moves (and
    at each instance's first frame, where there is no previous patch).
    """
    if video.motion_records is None:
        raise ValueError("video lacks recorded displacements; was it produced by generate_video?")
    t_total, _, h, w = video.frames.shape
    maps = np.zeros((t_total, 2, h, w), dtype=np.float32)
    for rec in video.motion_records:
        dx, dy = rec.velocity
        if dx == 0 and dy == 0:
            continue
        for t in range(rec.frame_start + 1, rec.frame_end):
            r, c = rec.positions[t - rec.frame_start]
            rows = (np.arange(rec.patch_size) + r) % h
            cols = (np.arange(rec.patch_size) + c) % w
            maps[t, 0, rows[:, None], cols[None, :]] = dx
            maps[t, 1, rows[:, None], cols[None, :]] = dy
    return MotionMaps(SYNTHETIC_FLOW, maps)


def motion_input(video: VideoSample, kind: str) -> MotionMaps:
    """Dispatch on the motion-modality name."""
    if kind == TEMPORAL_GRADIENT:
        return temporal_gradient(video)
    if kind == SYNTHETIC_FLOW:
        return synthetic_flow(video)
    raise ValueError(f"unknown motion modality {kind!r}")
