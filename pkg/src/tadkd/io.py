"""File formats: annotation JSON, raw video tensors, checkpoints.

Annotation schema (ActivityNet-style, version "1.0"):

    {"version": "1.0",
     "labels": ["run", "jump", ...],            # index order is canonical
     "database": {video_id: {"duration": sec,
                             "annotations": [{"segment": [s, e], "label": name}]}}}

Video tensors are raw little-endian float32 with a sidecar JSON header
``{T, H, W, channels, fps}``; round trips are bit-exact.

Checkpoints are a single file: a UTF-8 JSON header (format tag, free-form
metadata, ordered tensor name/shape list), a NUL byte, then the tensors'
raw little-endian float32 data concatenated in header order.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .types import ActionInstance, AnnotationSet

ANNOTATION_VERSION = "1.0"
CHECKPOINT_FORMAT = "tadkd-checkpoint-v1"


class ParseError(ValueError):
    """Malformed or unsupported input file."""


def default_class_names(num_classes: int) -> list[str]:
    return [f"class_{c}" for c in range(num_classes)]


def save_annotations(
    sets: Sequence[AnnotationSet], path: str | Path, class_names: Sequence[str]
) -> None:
    database = {}
    for ann in sets:
        entries = []
        for inst in ann.instances:
            if inst.label >= len(class_names):
                raise ValueError(f"label {inst.label} has no name in the labels array")
            entries.append({"segment": [inst.start, inst.end], "label": class_names[inst.label]})
        database[ann.video_id] = {"duration": ann.duration, "annotations": entries}
    payload = {"version": ANNOTATION_VERSION, "labels": list(class_names), "database": database}
    Path(path).write_text(json.dumps(payload, indent=1))


def load_annotations(path: str | Path) -> list[AnnotationSet]:
    sets, _ = load_annotations_with_labels(path)
    return sets


def load_annotations_with_labels(path: str | Path) -> tuple[list[AnnotationSet], list[str]]:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: not valid JSON at line {e.lineno}: {e.msg}") from e
    version = payload.get("version")
    if version != ANNOTATION_VERSION:
        raise ParseError(f"{path}: unknown annotation schema version {version!r}")
    if "labels" not in payload:
        raise ParseError(f"{path}: missing 'labels' field")
    labels = list(payload["labels"])
    index_of = {name: i for i, name in enumerate(labels)}
    if "database" not in payload:
        raise ParseError(f"{path}: missing 'database' field")

    sets = []
    for video_id, entry in payload["database"].items():
        if "duration" not in entry:
            raise ParseError(f"{path}: video {video_id!r}: missing 'duration' field")
        instances = []
        for k, rec in enumerate(entry.get("annotations", [])):
            if "segment" not in rec:
                raise ParseError(f"{path}: video {video_id!r} annotation {k}: missing 'segment' field")
            if "label" not in rec:
                raise ParseError(f"{path}: video {video_id!r} annotation {k}: missing 'label' field")
            name = rec["label"]
            if name not in index_of:
                raise ParseError(f"{path}: video {video_id!r} annotation {k}: unknown label {name!r}")
            seg = rec["segment"]
            if len(seg) != 2:
                raise ParseError(f"{path}: video {video_id!r} annotation {k}: 'segment' must be [start, end]")
            instances.append(ActionInstance(float(seg[0]), float(seg[1]), index_of[name]))
        sets.append(AnnotationSet(video_id, float(entry["duration"]), tuple(instances)))
    return sets, labels


def save_video_tensor(path: str | Path, frames: np.ndarray, fps: float) -> None:
    """Persist a (T, channels, H, W) float32 array as raw bytes + JSON sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(frames, dtype="<f4")
    if arr.ndim != 4:
        raise ValueError(f"expected (T, channels, H, W), got shape {arr.shape}")
    t, c, h, w = arr.shape
    path.write_bytes(arr.tobytes())
    header = {"T": t, "channels": c, "H": h, "W": w, "fps": fps}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header))


def load_video_tensor(path: str | Path) -> tuple[np.ndarray, float]:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise ParseError(f"missing sidecar header {sidecar}")
    header = json.loads(sidecar.read_text())
    for fld in ("T", "channels", "H", "W", "fps"):
        if fld not in header:
            raise ParseError(f"{sidecar}: missing {fld!r} field")
    shape = (header["T"], header["channels"], header["H"], header["W"])
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ParseError(f"{path}: payload size {data.size} does not match header shape {shape}")
    return data.reshape(shape).copy(), float(header["fps"])


def save_checkpoint(
    path: str | Path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None
) -> None:
    names = list(tensors)
    arrays = [np.ascontiguousarray(tensors[n], dtype="<f4") for n in names]
    header = {
        "format": CHECKPOINT_FORMAT,
        "metadata": metadata or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\0")
        for a in arrays:
            f.write(a.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    sep = blob.find(b"\0")
    if sep < 0:
        raise ParseError(f"{path}: missing header separator")
    try:
        header = json.loads(blob[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"{path}: bad checkpoint header: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    tensors: dict[str, np.ndarray] = {}
    offset = sep + 1
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise ParseError(f"{path}: truncated tensor data for {rec['name']!r}")
        tensors[rec["name"]] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    return tensors, header.get("metadata", {})
