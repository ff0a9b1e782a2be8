"""Classification metrics and class-map rendering.

Overall accuracy, per-class recall, average accuracy (mean recall over
classes that actually occur), and Cohen's kappa, all from one confusion
matrix with rows = true class and columns = predicted class. The map
renderer emits binary PPM (P6) with a fixed 16-color palette cycled over
class ids; id 0 (unlabeled) is black.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError

# Kelly-style high-contrast palette, cycled for class ids above 16.
PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (220, 190, 255),
    (170, 110, 40),
    (255, 250, 200),
    (128, 0, 0),
    (170, 255, 195),
)


def confusion_matrix(true: np.ndarray, pred: np.ndarray, n_class: int) -> np.ndarray:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise DimensionError("true/pred length mismatch: %s vs %s" % (true.shape, pred.shape))
    if true.size == 0:
        raise DataError("cannot build a confusion matrix from zero samples")
    if true.min() < 0 or true.max() >= n_class or pred.min() < 0 or pred.max() >= n_class:
        raise DataError("class id outside [0, %d)" % n_class)
    cm = np.zeros((n_class, n_class), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def overall_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise DataError("overall accuracy undefined for an empty confusion matrix")
    return float(np.trace(cm) / total)


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    """Diagonal over row sums; classes with no true samples get NaN."""
    row = cm.sum(axis=1).astype(np.float64)
    out = np.full(cm.shape[0], np.nan)
    present = row > 0
    out[present] = np.diag(cm)[present] / row[present]
    return out


def average_accuracy(cm: np.ndarray) -> float:
    recall = per_class_recall(cm)
    present = ~np.isnan(recall)
    if not present.any():
        raise DataError("average accuracy undefined: no class has samples")
    return float(recall[present].mean())


def kappa(cm: np.ndarray) -> float:
    """Cohen's kappa. Degenerate marginals (expected agreement 1) map to 1.0
    when observed agreement is also 1, else 0.0."""
    total = cm.sum()
    if total == 0:
        raise DataError("kappa undefined for an empty confusion matrix")
    p_o = np.trace(cm) / total
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (int(total) ** 2)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class_recall: np.ndarray
    n_samples: int

    def lines(self) -> list[str]:
        out = [
            "oa=%.12f" % self.oa,
            "aa=%.12f" % self.aa,
            "kappa=%.12f" % self.kappa,
            "n_samples=%d" % self.n_samples,
        ]
        for i, r in enumerate(self.per_class_recall):
            out.append("recall_class_%d=%s" % (i + 1, "nan" if np.isnan(r) else "%.12f" % r))
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def compute_metrics(true: np.ndarray, pred: np.ndarray, n_class: int) -> MetricsReport:
    cm = confusion_matrix(true, pred, n_class)
    return MetricsReport(
        oa=overall_accuracy(cm),
        aa=average_accuracy(cm),
        kappa=kappa(cm),
        per_class_recall=per_class_recall(cm),
        n_samples=int(cm.sum()),
    )


def render_class_map(labels: np.ndarray, palette=PALETTE) -> bytes:
    """(H, W) class ids -> binary PPM. Id 0 is black, id c uses
    palette[(c - 1) % len(palette)]."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DimensionError("class map must be 2-D, got %s" % (labels.shape,))
    h, w = labels.shape
    lut = np.zeros((int(labels.max(initial=0)) + 1, 3), dtype=np.uint8)
    for c in range(1, lut.shape[0]):
        lut[c] = palette[(c - 1) % len(palette)]
    body = lut[labels.astype(np.int64)]
    return b"P6\n%d %d\n255\n" % (w, h) + body.tobytes()
