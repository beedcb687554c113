"""Evaluation metrics for the four sub-tasks, reported as percentages."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

FG_TYPES = ("FS", "FA", "TS", "TA")


class UndefinedMetricError(ValueError):
    def __init__(self, msg: str, partial: dict | None = None):
        super().__init__(msg)
        self.partial = partial or {}


def _doubled_midranks(x: np.ndarray) -> np.ndarray:
    """Twice the 1-based average rank of each entry (integers, ties share a rank)."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    out = np.empty(len(x), dtype=np.int64)
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        out[order[i:j + 1]] = (i + 1) + (j + 1)
        i = j + 1
    return out


def auc_score(scores, labels) -> float:
    """Mann-Whitney AUC in percent, ties counted half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    u2 = int(_doubled_midranks(s)[y].sum()) - n_pos * (n_pos + 1)
    return 100.0 * u2 / (2 * n_pos * n_neg)


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC vertices (fpr, tpr), one per distinct threshold, from (0, 0) to (1, 1)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.diff(s) != 0, True]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    fpr = np.r_[0.0, fp / max(1, (~y).sum())]
    tpr = np.r_[0.0, tp / max(1, y.sum())]
    return fpr, tpr


def eer_score(scores, labels) -> float:
    """Equal error rate in percent, interpolated linearly between ROC vertices."""
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("EER needs both classes")
    fpr, tpr = roc_points(scores, labels)
    d = (1 - tpr) - fpr
    i = int(np.nonzero(d <= 0)[0][0])
    if d[i] == 0 or i == 0:
        return 100.0 * float(fpr[i])
    t = d[i - 1] / (d[i - 1] - d[i])
    return 100.0 * float(fpr[i - 1] + t * (fpr[i] - fpr[i - 1]))


def binary_metrics(scores, labels, threshold: float = 0.5) -> dict[str, float]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    acc = 100.0 * float(((s >= threshold) == y).mean())
    try:
        return {"auc": auc_score(s, y), "eer": eer_score(s, y), "acc": acc}
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(str(exc), {"acc": acc}) from None


def average_precision(scores, labels) -> float:
    """Mean over positives of the precision at that positive's score threshold, in percent.

    Tied scores share one threshold, so the result does not depend on input order.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if not y.any():
        raise UndefinedMetricError("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    last = np.r_[np.diff(ss) != 0, True]
    group_end = np.empty(len(ss), dtype=np.int64)  # last index tied with each element
    end = len(ss) - 1
    for i in range(len(ss) - 1, -1, -1):
        if last[i]:
            end = i
        group_end[i] = end
    tp = np.cumsum(yy)
    precisions = [tp[group_end[i]] / (group_end[i] + 1) for i in range(len(ss)) if yy[i]]
    return 100.0 * math.fsum(precisions) / len(precisions)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1 in percent; a zero denominator gives 0."""
    pr = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    re = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pr * re / (pr + re) if pr + re else 0.0
    return pr, re, f1


def multilabel_metrics(scores, labels, threshold: float = 0.5) -> dict:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pred = s >= threshold
    aps, f1s, skipped_ap, skipped_f1 = [], {}, [], []
    for c, name in enumerate(FG_TYPES[: s.shape[1]]):
        if y[:, c].any():
            aps.append(average_precision(s[:, c], y[:, c]))
        else:
            skipped_ap.append(name)
        tp = int((pred[:, c] & y[:, c]).sum())
        fp = int((pred[:, c] & ~y[:, c]).sum())
        fn = int((~pred[:, c] & y[:, c]).sum())
        if tp + fp + fn == 0:
            skipped_f1.append(name)
            f1s[name] = float("nan")
        else:
            f1s[name] = prf(tp, fp, fn)[2]
    valid_f1 = [v for v in f1s.values() if not math.isnan(v)]
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    fn = int((~pred & y).sum())
    return {
        "map": float(np.mean(aps)) if aps else float("nan"),
        "cf1": float(np.mean(valid_f1)) if valid_f1 else float("nan"),
        "of1": prf(tp, fp, fn)[2],
        "per_class_f1": f1s,
        "skipped_ap": skipped_ap,
        "skipped_f1": skipped_f1,
    }


def box_iou(a, b) -> float:
    """IoU of two ``cxcywh`` boxes."""
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def box_metrics(pred_boxes, gt_boxes) -> dict[str, float]:
    """``pred_boxes[i]`` is one box; ``gt_boxes[i]`` a list of boxes (best IoU counts).

    Samples without a ground-truth box are skipped.
    """
    ious = []
    for p, gts in zip(pred_boxes, gt_boxes):
        gts = [list(map(float, g)) for g in gts]
        if gts:
            p = list(map(float, p))
            ious.append(max(box_iou(p, g) for g in gts))
    if not ious:
        raise UndefinedMetricError("no samples with a ground-truth box")
    ious = np.asarray(ious)
    return {
        "iou_m": 100.0 * float(ious.mean()),
        "iou50": 100.0 * float((ious >= 0.5).mean()),
        "iou75": 100.0 * float((ious >= 0.75).mean()),
    }


def token_metrics(pred, gt, valid=None) -> dict:
    """Micro-averaged precision/recall/F1 over valid tokens."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    valid = np.ones_like(gt) if valid is None else np.asarray(valid).astype(bool)
    tp = int((pred & gt & valid).sum())
    fp = int((pred & ~gt & valid).sum())
    fn = int((~pred & gt & valid).sum())
    pr, re, f1 = prf(tp, fp, fn)
    return {"pr": pr, "re": re, "f1": f1, "no_predicted_positives": tp + fp == 0}


@dataclass
class EvalReport:
    auc: float = float("nan")
    eer: float = float("nan")
    acc: float = float("nan")
    map: float = float("nan")
    cf1: float = float("nan")
    of1: float = float("nan")
    iou_m: float = float("nan")
    iou50: float = float("nan")
    iou75: float = float("nan")
    token_pr: float = float("nan")
    token_re: float = float("nan")
    token_f1: float = float("nan")
    f1_fs: float = float("nan")
    f1_fa: float = float("nan")
    f1_ts: float = float("nan")
    f1_ta: float = float("nan")
    notes: list[str] = field(default_factory=list, compare=False)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "notes"]

    def values(self) -> list[float]:
        return [getattr(self, c) for c in self.columns()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        w.writerow([f"{v:.6f}" for v in self.values()])
        return buf.getvalue()

    def table(self) -> str:
        groups = [("Binary", ("auc", "eer", "acc")), ("Fine-grained", ("map", "cf1", "of1")),
                  ("Image grounding", ("iou_m", "iou50", "iou75")),
                  ("Text grounding", ("token_pr", "token_re", "token_f1")),
                  ("Per-type F1", ("f1_fs", "f1_fa", "f1_ts", "f1_ta"))]
        lines = []
        for title, cols in groups:
            cells = "  ".join(f"{c}={getattr(self, c):7.2f}" for c in cols)
            lines.append(f"{title:<16} {cells}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def build_report(binary_scores, binary_labels, fg_scores, fg_labels, pred_boxes, gt_boxes,
                 token_pred, token_gt, token_valid) -> EvalReport:
    rep = EvalReport()
    try:
        b = binary_metrics(binary_scores, binary_labels)
        rep.auc, rep.eer, rep.acc = b["auc"], b["eer"], b["acc"]
    except UndefinedMetricError as exc:
        rep.acc = exc.partial.get("acc", float("nan"))
        rep.notes.append(f"binary: {exc}")
    m = multilabel_metrics(fg_scores, fg_labels)
    rep.map, rep.cf1, rep.of1 = m["map"], m["cf1"], m["of1"]
    rep.f1_fs, rep.f1_fa, rep.f1_ts, rep.f1_ta = (m["per_class_f1"][k] for k in FG_TYPES)
    if m["skipped_ap"]:
        rep.notes.append(f"AP skipped for classes without positives: {','.join(m['skipped_ap'])}")
    try:
        bx = box_metrics(pred_boxes, gt_boxes)
        rep.iou_m, rep.iou50, rep.iou75 = bx["iou_m"], bx["iou50"], bx["iou75"]
    except UndefinedMetricError as exc:
        rep.notes.append(f"boxes: {exc}")
    t = token_metrics(token_pred, token_gt, token_valid)
    rep.token_pr, rep.token_re, rep.token_f1 = t["pr"], t["re"], t["f1"]
    if t["no_predicted_positives"]:
        rep.notes.append("tokens: no predicted positives, precision reported as 0")
    return rep
