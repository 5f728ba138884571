"""Point-adjusted detection metrics.

Under point adjustment a labelled anomalous segment (a maximal run of
consecutive anomalous points) counts as entirely detected when any point in
it is flagged. Thresholds are applied with a strict ``score > threshold``.

The best-F1 search is exhaustive over every flag set a global threshold can
produce: the candidate thresholds are each distinct score plus one value just
below the minimum (everything flagged). The largest score itself yields the
empty flag set.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import UndefinedMetricError, ValidationError


def segments(labels) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open ``(start, stop)`` pairs."""
    lab = np.asarray(labels, dtype=bool)
    padded = np.concatenate([[False], lab, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def point_adjust(flags, labels) -> np.ndarray:
    flags = np.asarray(flags, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if flags.shape != labels.shape:
        raise ValidationError(f"flags {flags.shape} and labels {labels.shape} differ in shape")
    out = flags.copy()
    for a, b in segments(labels):
        if flags[a:b].any():
            out[a:b] = True
    return out


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def candidate_thresholds(scores) -> np.ndarray:
    """Ascending thresholds: one just below the minimum, then every distinct score."""
    uniq = np.unique(np.asarray(scores, dtype=np.float64))
    return np.concatenate([[np.nextafter(uniq[0], -np.inf)], uniq])


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be 1-D and of equal length")
    if scores.size == 0:
        raise UndefinedMetricError("no scores to evaluate")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    return scores, labels


def sweep_counts(scores, labels, adjusted: bool = True):
    """TP / FP / FN at every candidate threshold, in O(n log n).

    Returns ``(thresholds, tp, fp, fn)`` with thresholds ascending.
    """
    scores, labels = _check(scores, labels)
    thr = candidate_thresholds(scores)
    normal = np.sort(scores[~labels])
    fp = normal.size - np.searchsorted(normal, thr, side="right")
    n_pos = int(labels.sum())
    if adjusted:
        segs = segments(labels)
        seg_max = np.array([scores[a:b].max() for a, b in segs])
        seg_len = np.array([b - a for a, b in segs])
        order = np.argsort(seg_max, kind="stable")
        seg_max, seg_len = seg_max[order], seg_len[order]
        cum = np.concatenate([[0], np.cumsum(seg_len)])
        tp = n_pos - cum[np.searchsorted(seg_max, thr, side="right")]
    else:
        pos = np.sort(scores[labels])
        tp = pos.size - np.searchsorted(pos, thr, side="right")
    fn = n_pos - tp
    return thr, tp.astype(np.int64), fp.astype(np.int64), fn.astype(np.int64)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("fpr,tpr,threshold\n")
            for f, t, th in zip(self.fpr, self.tpr, self.thresholds):
                fh.write(f"{float(f)!r},{float(t)!r},{float(th)!r}\n")


@dataclass
class EvalReport:
    f1: float
    precision: float
    recall: float
    threshold: float
    tp: int
    fp: int
    fn: int
    adjusted: bool
    auc: float | None = None
    roc: RocCurve | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("roc")
        return d


def best_f1_search(scores, labels, adjusted: bool = True) -> EvalReport:
    """Best F1 over all thresholds; ties go to higher precision, then higher threshold."""
    scores, labels = _check(scores, labels)
    if not labels.any():
        raise UndefinedMetricError("F1 is undefined without positive labels")
    thr, tp, fp, fn = sweep_counts(scores, labels, adjusted)
    stats = np.array([prf(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)])
    # lexsort: last key is primary
    best = np.lexsort((thr, stats[:, 0], stats[:, 2]))[-1]
    p, r, f = stats[best]
    return EvalReport(
        f1=float(f), precision=float(p), recall=float(r), threshold=float(thr[best]),
        tp=int(tp[best]), fp=int(fp[best]), fn=int(fn[best]), adjusted=adjusted,
    )


def roc_auc(scores, labels, adjusted: bool = False) -> RocCurve:
    """ROC over all candidate thresholds, AUC by the trapezoidal rule.

    With ``adjusted`` the true-positive rate uses point-adjusted flags.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both normal and anomalous points")
    thr, tp, fp, _ = sweep_counts(scores, labels, adjusted)
    # descending threshold -> non-decreasing rates
    thr, tp, fp = thr[::-1], tp[::-1], fp[::-1]
    tpr = tp / n_pos
    fpr = fp / n_neg
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thr, auc)


def evaluate(scores, labels) -> dict[str, EvalReport]:
    """Best-F1 reports with and without point adjustment, each carrying its ROC."""
    out = {}
    for name, adj in (("adjusted", True), ("raw", False)):
        rep = best_f1_search(scores, labels, adjusted=adj)
        if (~np.asarray(labels, dtype=bool)).any():
            rep.roc = roc_auc(scores, labels, adjusted=adj)
            rep.auc = rep.roc.auc
        out[name] = rep
    return out


def expand_to_rows(scores, stack: int) -> np.ndarray:
    """Repeat each super-step score over its ``stack`` raw rows."""
    return np.repeat(np.asarray(scores, dtype=np.float64), stack)


def row_granularity(t, scores, stack: int, row_labels):
    """Spread super-step scores over their raw rows.

    Super-step ``t`` covers rows ``[t*stack, (t+1)*stack)``. Returns
    ``(row_scores, labels_of_those_rows)``.
    """
    t = np.asarray(t, dtype=np.int64)
    rows = (t[:, None] * stack + np.arange(stack)).ravel()
    row_labels = np.asarray(row_labels, dtype=bool)
    if rows.size and rows[-1] >= row_labels.size:
        raise ValidationError(f"trace reaches row {rows[-1]} but only {row_labels.size} labels were given")
    return expand_to_rows(scores, stack), row_labels[rows]


def write_report(reports: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump({k: v.to_dict() for k, v in reports.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
