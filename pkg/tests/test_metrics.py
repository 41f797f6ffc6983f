"""Segmentation metrics against independent confusion/brute-force oracles."""

import math

import numpy as np
import pytest

from incepformer.metrics import (MetricsReport, boundary_pixels, confusion_binary,
                                 dice_score, hd95, metrics_csv, metrics_text,
                                 percentile_linear, report_from_masks, se_sp_acc)
from incepformer.tensor import make_rng


def brute_hd95(pred, true, cls=1):
    """Pure-python re-derivation: loop boundaries, loop all pairs, lerp percentile."""
    def boundary(mask):
        pts = []
        h, w = mask.shape
        for i in range(h):
            for j in range(w):
                if not mask[i, j]:
                    continue
                neigh = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
                if any(not (0 <= a < h and 0 <= b < w) or not mask[a, b]
                       for a, b in neigh):
                    pts.append((i, j))
        return pts

    def directed(a, b):
        return [min(math.hypot(i - x, j - y) for x, y in b) for i, j in a]

    pb, tb = boundary(pred == cls), boundary(true == cls)
    if not pb or not tb:
        return None
    dists = sorted(directed(pb, tb) + directed(tb, pb))
    if len(dists) == 1:
        return dists[0]
    pos = 0.95 * (len(dists) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(dists) - 1)
    return dists[lo] * (1 - (pos - lo)) + dists[hi] * (pos - lo)


def test_hd95_matches_brute_force_on_random_pairs():
    rng = make_rng(0)
    checked = 0
    for trial in range(200):
        size = int(rng.integers(4, 33))
        pred = (rng.uniform(size=(size, size)) < 0.3).astype(np.int64)
        true = (rng.uniform(size=(size, size)) < 0.3).astype(np.int64)
        got = hd95(pred, true)
        want = brute_hd95(pred, true)
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-12)
            checked += 1
    assert checked > 150  # the sweep must actually exercise the metric


def test_hd95_single_pixel_3_4_5():
    pred = np.zeros((8, 8), dtype=np.int64)
    true = np.zeros((8, 8), dtype=np.int64)
    pred[0, 0] = 1
    true[3, 4] = 1
    assert hd95(pred, true) == pytest.approx(5.0, abs=1e-12)


def test_hd95_identical_masks_zero():
    mask = np.zeros((16, 16), dtype=np.int64)
    mask[4:9, 5:12] = 1
    assert hd95(mask, mask) == pytest.approx(0.0, abs=0)


def test_hd95_absent_class_is_none():
    empty = np.zeros((8, 8), dtype=np.int64)
    full = np.ones((8, 8), dtype=np.int64)
    assert hd95(empty, full) is None
    assert hd95(full, empty) is None


def test_boundary_includes_image_border():
    full = np.ones((4, 4), dtype=bool)
    pts = {tuple(p) for p in boundary_pixels(full)}
    assert (0, 0) in pts and (3, 3) in pts
    assert (1, 1) not in pts and (2, 2) not in pts

    blob = np.zeros((5, 5), dtype=bool)
    blob[1:4, 1:4] = True
    pts = {tuple(p) for p in boundary_pixels(blob)}
    assert pts == {(i, j) for i in range(1, 4) for j in range(1, 4)} - {(2, 2)}


def test_percentile_matches_numpy_linear():
    rng = make_rng(1)
    for n in (1, 2, 7, 100):
        vals = rng.normal(size=n)
        for q in (0.0, 37.5, 50.0, 95.0, 100.0):
            assert percentile_linear(vals, q) == pytest.approx(
                float(np.percentile(vals, q)), abs=1e-12)
    with pytest.raises(ValueError, match="empty"):
        percentile_linear(np.array([]), 95.0)


def test_dice_matches_confusion_oracle():
    rng = make_rng(2)
    for _ in range(50):
        pred = rng.integers(0, 3, size=(16, 16))
        true = rng.integers(0, 3, size=(16, 16))
        for cls in (0, 1, 2):
            p, t = pred == cls, true == cls
            tp = int((p & t).sum())
            denom = int(p.sum()) + int(t.sum())
            want = 1.0 if denom == 0 else 2 * tp / denom
            assert dice_score(pred, true, cls) == pytest.approx(want, abs=1e-12)


def test_dice_symmetry_and_flip_invariance():
    rng = make_rng(3)
    pred = rng.integers(0, 2, size=(12, 12))
    true = rng.integers(0, 2, size=(12, 12))
    assert dice_score(pred, true, 1) == dice_score(true, pred, 1)
    assert dice_score(pred[:, ::-1], true[:, ::-1], 1) == dice_score(pred, true, 1)


def test_se_sp_acc_matches_confusion():
    rng = make_rng(4)
    pred = rng.integers(0, 2, size=(20, 20))
    true = rng.integers(0, 2, size=(20, 20))
    tp, fp, fn, tn = confusion_binary(pred, true)
    assert tp + fp + fn + tn == 400
    se, sp, acc = se_sp_acc(pred, true)
    assert se == pytest.approx(tp / (tp + fn), abs=1e-12)
    assert sp == pytest.approx(tn / (tn + fp), abs=1e-12)
    assert acc == pytest.approx((tp + tn) / 400, abs=1e-12)


def test_se_sp_acc_binary_only_and_degenerate():
    with pytest.raises(ValueError, match="binary"):
        se_sp_acc(np.array([[0, 1]]), np.array([[0, 2]]))
    ones = np.ones((4, 4), dtype=np.int64)
    se, sp, acc = se_sp_acc(ones, ones)
    assert (se, sp, acc) == (1.0, 1.0, 1.0)  # empty negatives: sp defined as 1


def test_report_aggregation_and_csv():
    ids = ["a", "b"]
    preds = [np.zeros((8, 8), dtype=np.int64), np.ones((8, 8), dtype=np.int64)]
    trues = [np.zeros((8, 8), dtype=np.int64), np.ones((8, 8), dtype=np.int64)]
    trues[0][2:4, 2:4] = 1
    report = report_from_masks(ids, preds, trues, num_classes=2)
    assert report.num_classes == 2
    per = report.per_class_dice()
    assert per[1] == pytest.approx((0.0 + 1.0) / 2)
    assert report.mean_dice() == pytest.approx(0.5)

    csv = metrics_csv(report)
    lines = csv.strip().split("\n")
    assert lines[0] == "sample_id,class,dice,hd95"
    assert any(",absent" in line for line in lines)  # a predicts no class 1
    row_b = [l for l in lines if l.startswith("b,1,")][0]
    assert float(row_b.split(",")[2]) == 1.0

    text = metrics_text(report, se_sp=(0.9, 0.8, 0.85))
    assert "mean" in text and "0.9" in text


def test_gt_as_pred_is_perfect():
    rng = make_rng(5)
    masks = [rng.integers(0, 4, size=(16, 16)) for _ in range(3)]
    report = report_from_masks(["x", "y", "z"], masks, masks, num_classes=4)
    assert report.mean_dice() == pytest.approx(1.0, abs=0)
    for _, _, _, hd in report.rows:
        if hd is not None:
            assert hd == 0.0
