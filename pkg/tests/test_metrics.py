import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vasl import data
from vasl.metrics import (
    MetricError,
    binarize,
    confusion,
    evaluate_arrays,
    evaluate_dirs,
    iou,
    pixel_accuracy,
    pixel_auc,
    pixel_f1,
)


def test_binarize_rules():
    assert binarize(np.array([0.5]), 0.5).tolist() == [1]
    assert binarize(np.zeros(4)).sum() == 0
    assert binarize(np.zeros(4), 0.0).sum() == 4
    with pytest.raises(MetricError):
        binarize(np.zeros(2), 1.5)


def test_iou_examples():
    m = np.array([1, 1, 0, 0])
    assert iou(m, m) == 1.0
    assert iou(m, 1 - m) == 0.0
    assert iou(np.array([1, 1, 0]), np.array([0, 1, 1])) == pytest.approx(1 / 3)
    assert iou(np.zeros(4), np.zeros(4)) == 1.0


def test_accuracy_examples():
    m = np.array([1, 0, 1, 0])
    assert pixel_accuracy(m, m) == 1.0
    assert pixel_accuracy(m, 1 - m) == 0.0
    assert pixel_accuracy(np.array([1, 0, 1, 1]), m) == 0.75


def test_f1_examples():
    m = np.array([1, 1, 0])
    assert pixel_f1(m, m) == 1.0
    assert pixel_f1(np.zeros(3), m) == 0.0
    # tp=2, fp=1, fn=1
    assert pixel_f1(np.array([1, 1, 1, 0]), np.array([1, 1, 0, 1])) == pytest.approx(2 / 3)
    assert pixel_f1(np.zeros(3), np.zeros(3)) == 1.0


def test_non_binary_rejected():
    with pytest.raises(MetricError):
        iou(np.array([0.5, 1]), np.array([1, 1]))
    with pytest.raises(MetricError):
        iou(np.array([1, 1]), np.array([1, 1, 0]))


def test_auc_examples():
    prob = np.array([0.9, 0.4, 0.8, 0.3])
    gt = np.array([1, 1, 0, 0])
    assert pixel_auc(prob, gt) == 0.75
    assert pixel_auc(np.array([0.9, 0.8, 0.1]), np.array([1, 1, 0])) == 1.0
    assert pixel_auc(np.full(5, 0.3), np.array([1, 0, 1, 0, 0])) == 0.5
    with pytest.raises(MetricError):
        pixel_auc(np.ones(3), np.ones(3))


def _brute_auc(prob, gt):
    pos = prob[gt == 1]
    neg = prob[gt == 0]
    score = 0.0
    for p, n in itertools.product(pos, neg):
        score += 1.0 if p > n else 0.5 if p == n else 0.0
    return score / (len(pos) * len(neg))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), levels=st.integers(2, 50))
def test_auc_matches_pairwise_enumeration(seed, levels):
    r = np.random.default_rng(seed)
    gt = r.integers(0, 2, 64)
    gt[0], gt[1] = 0, 1
    prob = r.integers(0, levels, 64) / (levels - 1)
    assert abs(pixel_auc(prob, gt) - _brute_auc(prob, gt)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_auc_monotone_invariance_and_complement(seed):
    r = np.random.default_rng(seed)
    gt = r.integers(0, 2, 64)
    gt[0], gt[1] = 0, 1
    prob = r.random(64)
    a = pixel_auc(prob, gt)
    assert pixel_auc(prob ** 3, gt) == a
    assert pixel_auc(np.exp(prob) - 5, gt) == a
    assert abs(a + pixel_auc(1 - prob, gt) - 1.0) < 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_counts_and_dice_jaccard(seed):
    r = np.random.default_rng(seed)
    p = r.integers(0, 2, (8, 8))
    g = r.integers(0, 2, (8, 8))
    tp = sum(1 for a, b in zip(p.flat, g.flat) if a and b)
    fp = sum(1 for a, b in zip(p.flat, g.flat) if a and not b)
    fn = sum(1 for a, b in zip(p.flat, g.flat) if not a and b)
    assert confusion(p, g) == (tp, fp, fn, 64 - tp - fp - fn)
    j, f = iou(p, g), pixel_f1(p, g)
    assert f >= j
    assert abs(f - 2 * j / (1 + j)) < 1e-15


def test_report_two_image_toy_set():
    gt_a = np.array([[1, 1], [0, 0]])
    pr_a = np.array([[1.0, 0.0], [0.0, 0.0]])  # tp1 fn1 tn2
    gt_b = np.array([[0, 0], [0, 0]])
    pr_b = np.array([[0.0, 0.0], [0.0, 0.7]])  # fp1 tn3
    rep = evaluate_arrays([("a", pr_a, gt_a), ("b", pr_b, gt_b)])
    m = rep.means()
    assert m["iou"] == pytest.approx((0.5 + 0.0) / 2)
    assert m["acc"] == pytest.approx((0.75 + 0.75) / 2)
    assert m["f1"] == pytest.approx((2 / 3 + 0.0) / 2)
    # b has single-class ground truth: AUC undefined and excluded
    assert m["auc"] == 0.75
    assert len(rep.notes) == 1
    pooled = rep.pooled()
    assert pooled["iou"] == pytest.approx(1 / 3)
    assert rep.to_csv().splitlines()[0] == "id,iou,acc,f1,auc"
    assert "mean(image)" in rep.to_text() and "pooled(pixel)" in rep.to_text()


def _write(tmp_path, masks, probs=None):
    gt = tmp_path / "gt"
    pred = tmp_path / "pred"
    gt.mkdir()
    pred.mkdir()
    ids = sorted(masks)
    data.write_manifest(gt, ids)
    for sid in ids:
        data.save_mask(gt / f"{sid}.mask.pgm", masks[sid])
        if probs is not None and sid in probs:
            data.save_probability(pred / f"{sid}.prob.pgm", probs[sid])
    return pred, gt


def test_self_evaluation_is_perfect(tmp_path):
    masks = {"x": np.eye(4), "y": 1 - np.eye(4)}
    _, gt = _write(tmp_path, masks)
    rep = evaluate_dirs(gt, gt)
    assert rep.means()["iou"] == rep.means()["acc"] == rep.means()["f1"] == 1.0


def test_missing_prediction_names_id(tmp_path):
    pred, gt = _write(tmp_path, {"x": np.eye(4), "y": np.eye(4)}, {"x": np.eye(4)})
    with pytest.raises(MetricError, match="'y'"):
        evaluate_dirs(pred, gt)


def test_probability_files_are_thresholded(tmp_path):
    prob = np.array([[0.6, 0.4], [0.2, 0.9]])
    pred, gt = _write(tmp_path, {"x": np.array([[1, 1], [0, 1]])}, {"x": prob})
    assert evaluate_dirs(pred, gt, 0.5).rows[0].tp == 2
    assert evaluate_dirs(pred, gt, 0.3).rows[0].tp == 3
