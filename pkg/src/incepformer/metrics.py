"""Segmentation metrics: per-class Dice, exact HD95, binary SE/SP/ACC.

HD95 uses exhaustive all-pairs distances between 4-connected boundary
pixels (image border counts as outside) and a linear-interpolation
percentile, so small-image results are exact and reproducible against a
brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def dice_score(pred: np.ndarray, true: np.ndarray, cls: int) -> float:
    p = pred == cls
    t = true == cls
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def confusion_binary(pred: np.ndarray, true: np.ndarray) -> tuple[int, int, int, int]:
    p = pred.astype(bool)
    t = true.astype(bool)
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    tn = int((~p & ~t).sum())
    return tp, fp, fn, tn


def se_sp_acc(pred: np.ndarray, true: np.ndarray) -> tuple[float, float, float]:
    """Sensitivity, specificity, accuracy for binary maps only."""
    for name, m in (("pred", pred), ("true", true)):
        vals = np.unique(m)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError(f"se_sp_acc requires binary labels, {name} has values {vals.tolist()}")
    tp, fp, fn, tn = confusion_binary(pred, true)
    se = tp / (tp + fn) if tp + fn else 1.0
    sp = tn / (tn + fp) if tn + fp else 1.0
    acc = (tp + tn) / (tp + fp + fn + tn)
    return se, sp, acc


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Coordinates (row, col) of foreground pixels with a 4-neighbor outside
    the region; pixels on the image border are boundary."""
    m = mask.astype(bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(m & ~interior)


def percentile_linear(values: np.ndarray, q: float) -> float:
    """q-th percentile with linear interpolation between order statistics."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if vals.size == 0:
        raise ValueError("percentile of empty set")
    if vals.size == 1:
        return float(vals[0])
    pos = (q / 100.0) * (vals.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, vals.size - 1)
    frac = pos - lo
    return float(vals[lo] * (1.0 - frac) + vals[hi] * frac)


def _directed_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Min euclidean distance from each point in a to the set b (all pairs)."""
    diff = a[:, None, :].astype(np.float64) - b[None, :, :].astype(np.float64)
    return np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)


def hd95(pred: np.ndarray, true: np.ndarray, cls: int = 1) -> float | None:
    """95th-percentile symmetric boundary distance; None when the class is
    absent from either map (no boundary to compare)."""
    pb = boundary_pixels(pred == cls)
    tb = boundary_pixels(true == cls)
    if len(pb) == 0 or len(tb) == 0:
        return None
    dists = np.concatenate([_directed_distances(pb, tb), _directed_distances(tb, pb)])
    return percentile_linear(dists, 95.0)


# -- aggregation ------------------------------------------------------------------


@dataclass
class MetricsReport:
    num_classes: int
    rows: list[tuple[str, int, float, float | None]] = field(default_factory=list)

    def per_class_dice(self) -> dict[int, float]:
        out = {}
        for cls in range(1, self.num_classes):
            vals = [r[2] for r in self.rows if r[1] == cls]
            out[cls] = float(np.mean(vals)) if vals else float("nan")
        return out

    def per_class_hd95(self) -> dict[int, float | None]:
        out = {}
        for cls in range(1, self.num_classes):
            vals = [r[3] for r in self.rows if r[1] == cls and r[3] is not None]
            out[cls] = float(np.mean(vals)) if vals else None
        return out

    def mean_dice(self) -> float:
        """Mean Dice over foreground classes (class means averaged)."""
        per = self.per_class_dice()
        return float(np.mean([per[c] for c in sorted(per)]))


def report_from_masks(ids: list[str], preds: list[np.ndarray],
                      trues: list[np.ndarray], num_classes: int) -> MetricsReport:
    report = MetricsReport(num_classes)
    for ident, pred, true in zip(ids, preds, trues):
        for cls in range(1, num_classes):
            report.rows.append(
                (ident, cls, dice_score(pred, true, cls), hd95(pred, true, cls)))
    return report


def metrics_csv(report: MetricsReport) -> str:
    lines = ["sample_id,class,dice,hd95"]
    for ident, cls, dice, hd in report.rows:
        hd_text = "absent" if hd is None else repr(hd)
        lines.append(f"{ident},{cls},{dice!r},{hd_text}")
    return "\n".join(lines) + "\n"


def metrics_text(report: MetricsReport, se_sp: tuple[float, float, float] | None = None) -> str:
    lines = ["== metrics summary =="]
    hd = report.per_class_hd95()
    for cls, dice in sorted(report.per_class_dice().items()):
        hd_text = "absent" if hd[cls] is None else f"{hd[cls]:.4f}"
        lines.append(f"class {cls}: dice {dice:.4f}  hd95 {hd_text}")
    lines.append(f"mean dice (foreground): {report.mean_dice():.4f}")
    if se_sp is not None:
        se, sp, acc = se_sp
        lines.append(f"binary se {se:.4f}  sp {sp:.4f}  acc {acc:.4f}")
    return "\n".join(lines) + "\n"
