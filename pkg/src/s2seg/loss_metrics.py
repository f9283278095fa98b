"""Segmentation losses (weighted cross-entropy + Lovasz-softmax) and IoU metrics.

The total training loss is the sum of a class-weighted cross-entropy and the
Lovasz-softmax relaxation of the Jaccard loss, both evaluated on grid cells
(or points) whose target label is not IGNORE.  The Lovasz term is averaged
over the classes present among the valid targets; its per-class value lies in
[0, 1] and coincides with 1 - IoU of the induced hard prediction whenever the
probabilities are binary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllIgnored, EmptyHistogram, EmptyMatrix, ShapeMismatch

IGNORE = 255

__all__ = [
    "IGNORE",
    "ClassWeights",
    "ConfusionMatrix",
    "softmax",
    "weighted_xent",
    "lovasz_softmax",
    "total_loss",
    "compute_weights",
    "miou_accuracy",
]


@dataclass
class ClassWeights:
    """Positive per-class loss weights."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("class weights must be a 1-D positive finite array")
        self.w = w

    @classmethod
    def uniform(cls, num_classes: int) -> "ClassWeights":
        return cls(np.ones(num_classes))


def compute_weights(label_histogram) -> ClassWeights:
    """Inverse-log-frequency weights: w_c = 1 / ln(1.02 + freq_c).

    Classes absent from the histogram receive the maximum computed weight.
    """
    hist = np.asarray(label_histogram, dtype=np.float64)
    total = hist.sum()
    if hist.size == 0 or total <= 0:
        raise EmptyHistogram("label histogram has no counts")
    freq = hist / total
    w = 1.0 / np.log(1.02 + freq)
    present = hist > 0
    if not present.all():
        w[~present] = w[present].max()
    return ClassWeights(w)


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _flatten(logits: np.ndarray, targets: np.ndarray):
    if logits.shape[1:] != targets.shape:
        raise ShapeMismatch(
            f"logits spatial shape {logits.shape[1:]} != targets shape {targets.shape}"
        )
    C = logits.shape[0]
    return logits.reshape(C, -1), targets.reshape(-1)


def weighted_xent(logits: np.ndarray, targets: np.ndarray, weights: ClassWeights):
    """Mean weighted cross-entropy over valid cells; returns (loss, dloss/dlogits)."""
    flat, y = _flatten(logits, targets)
    C = flat.shape[0]
    valid = y != IGNORE
    nv = int(valid.sum())
    if nv == 0:
        raise AllIgnored("no valid cells for cross-entropy")
    yv = y[valid]
    p = softmax(flat[:, valid], axis=0)
    logp = np.log(np.maximum(p[yv, np.arange(nv)], 1e-300))
    wv = weights.w[yv]
    loss = float(-(wv * logp).sum() / nv)
    grad_v = p * wv[None, :]
    grad_v[yv, np.arange(nv)] -= wv
    grad = np.zeros_like(flat)
    grad[:, valid] = grad_v / nv
    return loss, grad.reshape(logits.shape)


def _lovasz_grad(fg_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard-loss Lovasz extension along the sorted errors."""
    gts = fg_sorted.sum()
    inter = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jac = 1.0 - inter / union
    if jac.size > 1:
        jac[1:] = jac[1:] - jac[:-1]
    return jac


def lovasz_softmax(probs: np.ndarray, targets: np.ndarray):
    """Lovasz-softmax loss over classes present in targets; returns (loss, dloss/dprobs).

    ``probs`` rows must already be softmax outputs (each cell sums to 1).
    """
    flat, y = _flatten(probs, targets)
    valid = y != IGNORE
    if not valid.any():
        raise AllIgnored("no valid cells for the Lovasz loss")
    pv = flat[:, valid]
    yv = y[valid]
    colsum = pv.sum(axis=0)
    if np.abs(colsum - 1.0).max() > 1e-6:
        raise ValueError("probs must be softmax outputs (columns must sum to 1)")
    present = np.unique(yv)
    grad = np.zeros_like(flat)
    loss = 0.0
    for c in present:
        fg = (yv == c).astype(np.float64)
        e = np.abs(fg - pv[c])
        order = np.argsort(-e, kind="stable")
        g = _lovasz_grad(fg[order])
        loss += float(e[order] @ g)
        # d e_i / d p_i(c) = -1 on foreground, +1 elsewhere
        ge = np.zeros_like(e)
        ge[order] = g
        grad[c, valid] += ge * np.where(fg > 0, -1.0, 1.0)
    n = len(present)
    grad /= n
    return loss / n, grad.reshape(probs.shape)


def total_loss(logits: np.ndarray, targets: np.ndarray, weights: ClassWeights):
    """Weighted cross-entropy plus Lovasz-softmax; returns (loss, dloss/dlogits)."""
    xl, xg = weighted_xent(logits, targets, weights)
    flat, y = _flatten(logits, targets)
    p = softmax(flat, axis=0)
    ll, lg = lovasz_softmax(p.reshape(logits.shape), targets)
    lgf = lg.reshape(p.shape)
    # chain through softmax: J^T g = p * (g - sum_c p_c g_c)
    chained = p * (lgf - (p * lgf).sum(axis=0, keepdims=True))
    return xl + ll, xg + chained.reshape(logits.shape)


class ConfusionMatrix:
    """Accumulates per-class counts; IGNORE targets are excluded."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, true_labels: np.ndarray, pred_labels: np.ndarray):
        t = np.asarray(true_labels).ravel()
        p = np.asarray(pred_labels).ravel()
        if t.shape != p.shape:
            raise ShapeMismatch("true/pred label arrays differ in size")
        keep = t != IGNORE
        t, p = t[keep], p[keep]
        np.add.at(self.counts, (t, p), 1)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN for classes with an empty union."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        union = tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(union > 0, tp / union, np.nan)


def miou_accuracy(cm: ConfusionMatrix) -> tuple[float, float]:
    """Mean IoU over classes with non-empty union, and overall accuracy."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    iou = cm.iou()
    miou = float(np.nanmean(iou))
    acc = float(np.diag(cm.counts).sum() / cm.total)
    return miou, acc


def metrics_report(cm: ConfusionMatrix, class_names=None) -> dict:
    """Structured metrics: per-class IoU, mIoU, accuracy and counts."""
    miou, acc = miou_accuracy(cm)
    iou = cm.iou()
    names = class_names or [f"class_{i}" for i in range(cm.num_classes)]
    return {
        "miou": miou,
        "accuracy": acc,
        "total": cm.total,
        "per_class": {
            str(names[c]): {
                "iou": None if np.isnan(iou[c]) else float(iou[c]),
                "true_count": int(cm.counts[c].sum()),
                "pred_count": int(cm.counts[:, c].sum()),
            }
            for c in range(cm.num_classes)
        },
    }
