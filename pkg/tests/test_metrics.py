import numpy as np
import pytest
import torch

from changekit.metrics import (
    ConfusionCounts,
    EmptyInput,
    ShapeMismatch,
    confusion,
    metrics,
    render_error_map,
)


def brute_force_counts(pred, truth):
    """Independent oracle: per-pixel double loop."""
    tp = tn = fp = fn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p, t = int(pred[i, j]), int(truth[i, j])
            if p == 1 and t == 1:
                tp += 1
            elif p == 0 and t == 0:
                tn += 1
            elif p == 1 and t == 0:
                fp += 1
            else:
                fn += 1
    return tp, tn, fp, fn


def test_confusion_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred = rng.integers(0, 2, size=(64, 64))
        truth = rng.integers(0, 2, size=(64, 64))
        c = confusion(pred, truth)
        assert (c.tp, c.tn, c.fp, c.fn) == brute_force_counts(pred, truth)


def test_confusion_trivial_cases():
    ones = np.ones((10, 10), dtype=np.uint8)
    c = confusion(ones, ones)
    assert (c.tp, c.tn, c.fp, c.fn) == (100, 0, 0, 0)
    c = confusion(1 - ones, ones)
    assert (c.tp, c.tn) == (0, 0)
    assert c.fp + c.fn == 100


def test_confusion_rejects_shape_mismatch_and_nonbinary():
    with pytest.raises(ShapeMismatch):
        confusion(np.zeros((4, 4), dtype=np.uint8), np.zeros((4, 5), dtype=np.uint8))
    with pytest.raises(ValueError):
        confusion(np.full((4, 4), 2), np.zeros((4, 4), dtype=np.uint8))


def test_metrics_hand_case():
    rep = metrics(ConfusionCounts(tp=50, tn=40, fp=5, fn=5))
    assert rep.precision == pytest.approx(50 / 55, abs=1e-6)
    assert rep.recall == pytest.approx(50 / 55, abs=1e-6)
    assert rep.f1 == pytest.approx(0.9091, abs=1e-4)
    assert rep.iou == pytest.approx(0.8333, abs=1e-4)
    assert rep.oa == pytest.approx(0.9, abs=1e-9)


def test_metrics_perfect_and_degenerate():
    rep = metrics(ConfusionCounts(tp=10, tn=10))
    assert (rep.precision, rep.recall, rep.f1, rep.iou, rep.oa) == (1, 1, 1, 1, 1)
    rep = metrics(ConfusionCounts(tn=7))
    assert (rep.precision, rep.recall, rep.f1, rep.iou, rep.oa) == (1, 1, 1, 1, 1)
    rep = metrics(ConfusionCounts(tn=5, fn=5))
    assert rep.f1 == 0.0 and rep.iou == 0.0
    with pytest.raises(EmptyInput):
        metrics(ConfusionCounts())


def test_f1_iou_identity_and_swap_invariance():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pred = rng.integers(0, 2, size=(32, 32))
        truth = rng.integers(0, 2, size=(32, 32))
        a = metrics(confusion(pred, truth))
        b = metrics(confusion(truth, pred))
        assert a.f1 >= a.iou
        if confusion(pred, truth).tp > 0:
            assert a.f1 == pytest.approx(2 * a.iou / (1 + a.iou), rel=1e-12)
        # swapping pred/truth swaps fp<->fn and keeps F1/IoU/OA
        assert a.f1 == pytest.approx(b.f1, rel=1e-12)
        assert a.iou == pytest.approx(b.iou, rel=1e-12)
        assert a.oa == pytest.approx(b.oa, rel=1e-12)
        ca, cb = confusion(pred, truth), confusion(truth, pred)
        assert (ca.fp, ca.fn) == (cb.fn, cb.fp)


def test_counts_additive_matches_micro_average():
    rng = np.random.default_rng(2)
    total = ConfusionCounts()
    preds, truths = [], []
    for _ in range(5):
        preds.append(rng.integers(0, 2, size=(16, 16)))
        truths.append(rng.integers(0, 2, size=(16, 16)))
        total = total + confusion(preds[-1], truths[-1])
    joint = confusion(np.concatenate(preds), np.concatenate(truths))
    assert (total.tp, total.tn, total.fp, total.fn) == (joint.tp, joint.tn, joint.fp, joint.fn)


def test_render_error_map_colors():
    pred = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    truth = np.array([[0, 1], [0, 1]], dtype=np.uint8)
    img = render_error_map(pred, truth)
    assert img.dtype == np.uint8 and img.shape == (2, 2, 3)
    assert tuple(img[0, 0]) == (0, 0, 0)        # TN
    assert tuple(img[0, 1]) == (255, 255, 255)  # TP
    assert tuple(img[1, 0]) == (255, 0, 0)      # FP
    assert tuple(img[1, 1]) == (0, 0, 255)      # FN


def test_render_checkerboard_false_positives():
    pred = np.indices((8, 8)).sum(axis=0) % 2
    truth = np.zeros((8, 8), dtype=np.uint8)
    img = render_error_map(pred, truth)
    assert (img[pred == 1] == (255, 0, 0)).all()
    assert (img[pred == 0] == (0, 0, 0)).all()


def test_render_accepts_torch_tensors():
    pred = torch.tensor([[1]], dtype=torch.uint8)
    truth = torch.tensor([[0]], dtype=torch.uint8)
    assert tuple(render_error_map(pred, truth)[0, 0]) == (255, 0, 0)
