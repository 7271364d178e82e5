"""Detection evaluation: temporal IoU, per-class AP, mAP tables.

``average_precision`` is the production path (greedy matching in score
order, all-point interpolated PR area). ``oracle_ap`` re-derives AP by
exhaustive enumeration on small inputs and exists purely to cross-check
the production path in tests; the two share nothing but ``tiou``.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .types import ActionInstance, AnnotationSet, Prediction

THUMOS_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
ACTIVITYNET_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


class EvalConfig:
    """Threshold set for the mAP protocol."""

    def __init__(self, tiou_thresholds: Sequence[float] = THUMOS_THRESHOLDS):
        thresholds = tuple(float(t) for t in tiou_thresholds)
        if not thresholds:
            raise ValueError("threshold list must be nonempty")
        if any(not (0.0 < t < 1.0) for t in thresholds):
            raise ValueError(f"thresholds must lie in (0,1), got {thresholds}")
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {thresholds}")
        self.tiou_thresholds = thresholds


def tiou(a, b):
    """Temporal IoU of two (start, end) intervals; 0 when disjoint.

    Works on floats and on 0-dim torch tensors alike (the completeness
    loss routes its differentiable interval math through here so that
    training and evaluation share a single IoU definition).
    """
    a_s, a_e = a
    b_s, b_e = b
    if not (a_s < a_e) or not (b_s < b_e):
        raise ValueError(f"invalid interval: {(a_s, a_e)} vs {(b_s, b_e)}")
    lo = a_s if a_s > b_s else b_s
    hi = a_e if a_e < b_e else b_e
    inter = hi - lo
    if not (inter > 0):
        return inter * 0.0  # keeps tensor type (and zero gradient) for tensor inputs
    union = (a_e - a_s) + (b_e - b_s) - inter
    return inter / union


def _score_order(preds: Sequence[Prediction], label: int) -> list[int]:
    # descending score, ties broken by earlier start
    return sorted(range(len(preds)), key=lambda i: (-preds[i].scores[label], preds[i].start))


def average_precision(
    preds: Sequence[Prediction],
    gts: Sequence[ActionInstance],
    thresh: float,
    label: int = 0,
) -> float:
    """AP of one class at one tIoU threshold.

    Greedy matching in score order: a prediction is a true positive iff
    its best-tIoU still-unmatched ground truth reaches the threshold;
    each ground truth is consumed at most once. The PR curve is
    integrated with the monotone precision envelope. Empty-vs-empty is
    defined as 1.0 so per-class means stay well-behaved on tiny splits.
    """
    if not gts:
        return 1.0 if not preds else 0.0
    if not preds:
        return 0.0

    matched = [False] * len(gts)
    tp = []
    for i in _score_order(preds, label):
        p = preds[i]
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(gts):
            if matched[j]:
                continue
            v = tiou((p.start, p.end), (g.start, g.end))
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= thresh:
            matched[best_j] = True
            tp.append(1)
        else:
            tp.append(0)

    # all-point interpolation: recall rises by 1/n_gt at each true positive,
    # scored with the monotone precision envelope at that point
    n_gt = len(gts)
    cum_tp = 0
    precisions = []
    for k, hit in enumerate(tp, start=1):
        cum_tp += hit
        precisions.append(cum_tp / k)
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    total = 0.0
    for p, hit in zip(precisions, tp):
        if hit:
            total += p
    return total / n_gt


def oracle_ap(
    preds: Sequence[Prediction],
    gts: Sequence[ActionInstance],
    thresh: float,
    label: int = 0,
) -> float:
    """Exhaustive AP reference for small instances (test oracle).

    Enumerates every matching consistent with score-order greediness
    (branching over tIoU argmax ties) and computes AP per outcome as the
    per-true-positive sum of interpolated precisions. All branches must
    agree; inputs above the size cap are rejected.
    """
    if len(preds) > 8 or len(gts) > 5:
        raise ValueError(f"oracle limited to <=8 preds and <=5 gts, got {len(preds)}/{len(gts)}")
    if not gts:
        return 1.0 if not preds else 0.0
    if not preds:
        return 0.0

    order = sorted(range(len(preds)), key=lambda i: (-preds[i].scores[label], preds[i].start))

    outcomes: set[float] = set()

    def ap_of(tp_seq: list[int]) -> float:
        # area under PR via interpolated precision at each TP's recall level:
        # p_interp(r) = max precision among all cut points with recall >= r
        n_gt = len(gts)
        points = []
        cum = 0
        for k, hit in enumerate(tp_seq, start=1):
            cum += hit
            points.append((cum / n_gt, cum / k, hit))
        total = 0.0
        for r_k, _, hit in points:
            if not hit:
                continue
            total += max(p for r, p, _ in points if r >= r_k)
        return total / n_gt

    def recurse(pos: int, matched: frozenset[int], tp_seq: list[int]):
        if pos == len(order):
            outcomes.add(ap_of(tp_seq))
            return
        p = preds[order[pos]]
        ious = []
        for j, g in enumerate(gts):
            if j in matched:
                continue
            v = tiou((p.start, p.end), (g.start, g.end))
            if v >= thresh and v > 0:
                ious.append((v, j))
        if not ious:
            recurse(pos + 1, matched, tp_seq + [0])
            return
        best = max(v for v, _ in ious)
        for v, j in ious:
            if v == best:
                recurse(pos + 1, matched | {j}, tp_seq + [1])

    recurse(0, frozenset(), [])
    if len(outcomes) != 1:
        raise RuntimeError(f"ambiguous greedy matching, outcomes {sorted(outcomes)}")
    return outcomes.pop()


def mean_average_precision(
    video_preds: Mapping[str, Sequence[Prediction]],
    video_gts: Mapping[str, AnnotationSet],
    num_classes: int,
    cfg: EvalConfig,
) -> dict:
    """mAP at each threshold plus the average mAP over the threshold set.

    Predictions are pooled per class across the whole evaluation set
    (detection-style pooling): a prediction enters class c whenever its
    score for c is positive. Classes with no ground-truth instance
    anywhere in the set are excluded from the class mean.
    """
    # Matching is per-video: shift each video onto its own disjoint stretch
    # of the time axis so pooled intervals from different videos can never
    # reach a positive tIoU.
    offsets: dict[str, float] = {}
    cursor = 0.0
    for vid, ann in video_gts.items():
        offsets[vid] = cursor
        cursor += ann.duration + 1.0

    class_preds: list[list[Prediction]] = [[] for _ in range(num_classes)]
    class_gts: list[list[ActionInstance]] = [[] for _ in range(num_classes)]
    for vid, ann in video_gts.items():
        off = offsets[vid]
        for inst in ann.instances:
            class_gts[inst.label].append(
                ActionInstance(inst.start + off, inst.end + off, inst.label)
            )
        for p in video_preds.get(vid, ()):
            if not p.start < p.end:
                continue
            shifted = Prediction(p.start + off, p.end + off, p.scores, p.source_timestep)
            for c in range(num_classes):
                if p.scores[c] > 0.0:
                    class_preds[c].append(shifted)

    present = [c for c in range(num_classes) if class_gts[c]]
    per_class: dict[str, dict[str, float]] = {}
    map_at: dict[float, float] = {}
    for t in cfg.tiou_thresholds:
        aps = {}
        for c in present:
            aps[c] = average_precision(class_preds[c], class_gts[c], t, label=c)
        map_at[t] = sum(aps.values()) / len(aps) if aps else 0.0
        per_class[f"{t:g}"] = {str(c): aps[c] for c in aps}
    avg = sum(map_at.values()) / len(map_at)
    return {
        "map_at_tiou": {f"{t:g}": v for t, v in map_at.items()},
        "avg": avg,
        "per_class_ap": per_class,
    }


def format_map_table(rows: Mapping[str, dict], thresholds: Iterable[float]) -> str:
    """Column-aligned text table: one row per named result, AVG last."""
    thresholds = list(thresholds)
    header = ["method"] + [f"{t:g}" for t in thresholds] + ["AVG"]
    lines = [header]
    for name, report in rows.items():
        cells = [name]
        for t in thresholds:
            cells.append(f"{report['map_at_tiou'][f'{t:g}']:.4f}")
        cells.append(f"{report['avg']:.4f}")
        lines.append(cells)
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    out = []
    for r in lines:
        out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(out)
