"""Confusion-matrix metrics and the four-color error-map renderer.

Counts are additive, so corpus-level numbers are micro-averaged: accumulate
ConfusionCounts over every evaluated pixel, then convert once.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np
import torch


class ShapeMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            tn=self.tn + other.tn,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
        )


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    iou: float
    oa: float

    def as_dict(self) -> dict:
        return asdict(self)

    def as_table(self) -> str:
        keys = ["precision", "recall", "f1", "iou", "oa"]
        head = "  ".join(f"{k:>9}" for k in keys)
        row = "  ".join(f"{getattr(self, k):9.4f}" for k in keys)
        return head + "\n" + row


def _as_uint8(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    arr = np.asarray(t)
    uniq = np.unique(arr)
    if not np.isin(uniq, (0, 1)).all():
        raise ValueError(f"expected binary {{0,1}} tensor, found values {uniq[:8]}")
    return arr.astype(np.uint8)


def confusion(pred, truth) -> ConfusionCounts:
    """Exact per-pixel TP/TN/FP/FN counts for binary masks of equal shape."""
    p = _as_uint8(pred)
    t = _as_uint8(truth)
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs truth {t.shape}")
    tp = int(np.sum((p == 1) & (t == 1)))
    tn = int(np.sum((p == 0) & (t == 0)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def metrics(c: ConfusionCounts) -> MetricsReport:
    """Precision, recall, F1, IoU and overall accuracy from raw counts.

    Degenerate conventions: with no positives anywhere (tp=fp=fn=0) all of
    Pr/Rc/F1/IoU are 1.0 (perfect empty agreement); with positives present
    but tp=0, F1 and IoU are 0.
    """
    if c.total == 0:
        raise EmptyInput("no pixels to evaluate")
    pr = 1.0 if c.tp + c.fp == 0 else c.tp / (c.tp + c.fp)
    rc = 1.0 if c.tp + c.fn == 0 else c.tp / (c.tp + c.fn)
    if c.tp == 0:
        f1 = 1.0 if (c.fp == 0 and c.fn == 0) else 0.0
        iou = 1.0 if (c.fp == 0 and c.fn == 0) else 0.0
    else:
        f1 = 2 * pr * rc / (pr + rc)
        iou = c.tp / (c.tp + c.fp + c.fn)
    oa = (c.tp + c.tn) / c.total
    return MetricsReport(precision=pr, recall=rc, f1=f1, iou=iou, oa=oa)


# Error-map color convention: TN black, TP white, FP red, FN blue.
_COLORS = {
    "tn": (0, 0, 0),
    "tp": (255, 255, 255),
    "fp": (255, 0, 0),
    "fn": (0, 0, 255),
}


def render_error_map(pred, truth) -> np.ndarray:
    """Render a [H, W, 3] uint8 error image from binary pred/truth masks."""
    p = _as_uint8(pred)
    t = _as_uint8(truth)
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs truth {t.shape}")
    out = np.zeros(p.shape + (3,), dtype=np.uint8)
    out[(p == 1) & (t == 1)] = _COLORS["tp"]
    out[(p == 1) & (t == 0)] = _COLORS["fp"]
    out[(p == 0) & (t == 1)] = _COLORS["fn"]
    return out


def save_error_map(pred, truth, path):
    from PIL import Image

    Image.fromarray(render_error_map(pred, truth), mode="RGB").save(path)


def write_report(report: MetricsReport, json_path=None, text_path=None):
    if json_path is not None:
        with open(json_path, "w") as f:
            json.dump(report.as_dict(), f, indent=2, sort_keys=True)
    if text_path is not None:
        with open(text_path, "w") as f:
            f.write(report.as_table() + "\n")
