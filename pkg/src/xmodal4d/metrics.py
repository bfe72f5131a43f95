"""Action-segmentation and semantic-segmentation metrics (all in percent)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

F1_THRESHOLDS = (0.10, 0.25, 0.50)


class Segment(NamedTuple):
    label: int
    start: int
    end: int  # inclusive


def segments_from_labels(frame_labels: Sequence[int]) -> list[Segment]:
    labels = np.asarray(frame_labels).reshape(-1)
    if labels.size == 0:
        raise ValueError("cannot segment an empty label sequence")
    cuts = np.nonzero(labels[1:] != labels[:-1])[0] + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts - 1, [labels.size - 1]])
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def frame_accuracy(pred_labels, gt_labels) -> float:
    pred, gt = np.asarray(pred_labels).reshape(-1), np.asarray(gt_labels).reshape(-1)
    if pred.shape != gt.shape or gt.size == 0:
        raise ValueError(f"label sequences must be non-empty and equally long ({pred.size} vs {gt.size})")
    return 100.0 * float(np.mean(pred == gt))


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_score(pred: Sequence[Segment], gt: Sequence[Segment]) -> float:
    p = [s.label for s in pred]
    g = [s.label for s in gt]
    denom = max(len(p), len(g))
    if denom == 0:
        return 100.0
    return max(0.0, 100.0 * (1.0 - levenshtein(p, g) / denom))


def segment_iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start) + 1
    return inter / union


def f1_counts(pred: Sequence[Segment], gt: Sequence[Segment], k: float) -> tuple[int, int, int]:
    """Greedy matching in prediction order -> (tp, fp, fn).

    Each predicted segment claims the unmatched same-label ground-truth
    segment of highest IoU (earliest on ties) if that IoU reaches ``k``.
    """
    used = [False] * len(gt)
    tp = 0
    for p in pred:
        best, best_iou = -1, -1.0
        for j, g in enumerate(gt):
            if used[j] or g.label != p.label:
                continue
            iou = segment_iou(p, g)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= k:
            used[best] = True
            tp += 1
    return tp, len(pred) - tp, len(gt) - tp


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 100.0 * 2 * precision * recall / (precision + recall)


def f1_at_k(pred: Sequence[Segment], gt: Sequence[Segment], k: float) -> float:
    return f1_from_counts(*f1_counts(pred, gt, k))


def f1_counts_bruteforce(pred: Sequence[Segment], gt: Sequence[Segment], k: float) -> tuple[int, int, int]:
    """Reference matcher from the full frame-level IoU table.

    IoUs come from explicit frame sets rather than interval arithmetic; the
    assignment is resolved pass by pass over the whole pred x gt table.
    """
    sets_p = [set(range(s.start, s.end + 1)) for s in pred]
    sets_g = [set(range(s.start, s.end + 1)) for s in gt]
    table = np.zeros((len(pred), len(gt)))
    for i in range(len(pred)):
        for j in range(len(gt)):
            if pred[i].label == gt[j].label:
                table[i, j] = len(sets_p[i] & sets_g[j]) / len(sets_p[i] | sets_g[j])
            else:
                table[i, j] = -1.0
    claimed = np.zeros(len(gt), dtype=bool)
    hit = np.zeros(len(pred), dtype=bool)
    for i in range(len(pred)):
        row = np.where(claimed, -1.0, table[i])
        if row.size and row.max() >= k and row.max() >= 0:
            claimed[int(np.argmax(row))] = True
            hit[i] = True
    tp = int(hit.sum())
    return tp, len(pred) - tp, len(gt) - tp


def mean_iou(pred, gt, num_classes: int, ignore: int | None = -1) -> float:
    """Per-class IoU averaged over the classes present in ``gt``."""
    pred, gt = np.asarray(pred).reshape(-1), np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    keep = np.ones(gt.shape, bool) if ignore is None else gt != ignore
    pred, gt = pred[keep], gt[keep]
    ious = []
    for c in range(num_classes):
        in_gt = gt == c
        if not in_gt.any():
            continue
        in_pred = pred == c
        ious.append((in_gt & in_pred).sum() / (in_gt | in_pred).sum())
    return 100.0 * float(np.mean(ious)) if ious else 0.0


@dataclass
class MetricReport:
    acc: float
    edit: float
    f1: dict[float, float] = field(default_factory=dict)
    miou: float | None = None

    def as_dict(self) -> dict:
        out = {"acc": self.acc, "edit": self.edit}
        for k in F1_THRESHOLDS:
            out[f"f1_{int(round(k * 100))}"] = self.f1.get(k, 0.0)
        out["miou"] = self.miou
        return out


def evaluate_sequences(
    preds: Iterable[Sequence[int]], gts: Iterable[Sequence[int]], thresholds: Sequence[float] = F1_THRESHOLDS
) -> MetricReport:
    """Corpus-level report.

    Frame accuracy pools all frames, the edit score is averaged per video and
    F1 pools true/false positive counts across videos.
    """
    correct = total = 0
    edits = []
    counts = {k: np.zeros(3, dtype=np.int64) for k in thresholds}
    for p, g in zip(preds, gts):
        p, g = np.asarray(p).reshape(-1), np.asarray(g).reshape(-1)
        correct += int((p == g).sum())
        total += g.size
        sp, sg = segments_from_labels(p), segments_from_labels(g)
        edits.append(edit_score(sp, sg))
        for k in thresholds:
            counts[k] += f1_counts(sp, sg, k)
    if total == 0:
        raise ValueError("no sequences to evaluate")
    return MetricReport(
        acc=100.0 * correct / total,
        edit=float(np.mean(edits)),
        f1={k: f1_from_counts(*c) for k, c in counts.items()},
    )
