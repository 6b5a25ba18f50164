"""Scalar metrics: Pearson correlation, interval IoU, detection F1, ROUGE-L."""
from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import LengthMismatch


def pcc(xs, ys) -> float | None:
    """Pearson correlation; ``None`` when undefined (n < 2 or a constant input)."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} vs {len(ys)} values")
    if len(xs) < 2:
        return None
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def interval_iou(a, b) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def detection_f1(preds, refs, kind: str) -> tuple[float, float, float]:
    """Per-recording presence of ``kind``; returns (precision, recall, f1)."""
    if len(preds) != len(refs):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(refs)} references")
    tp = fp = fn = 0
    for p, r in zip(preds, refs):
        has_p = any(s.kind == kind for s in p)
        has_r = any(s.kind == kind for s in r)
        tp += has_p and has_r
        fp += has_p and not has_r
        fn += has_r and not has_p
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def rouge_l(pred_text: str, ref_text: str) -> float:
    """Word-level ROUGE-L F-measure (beta = 1)."""
    pred = pred_text.split()
    ref = ref_text.split()
    if not pred or not ref:
        return 0.0
    ids = {}
    a = np.array([ids.setdefault(w, len(ids)) for w in pred], dtype=np.int64)
    b = np.array([ids.setdefault(w, len(ids)) for w in ref], dtype=np.int64)
    lcs = int(kernels.lcs_length(a, b))
    if lcs == 0:
        return 0.0
    p = lcs / len(pred)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)
