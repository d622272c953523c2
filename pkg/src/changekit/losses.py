"""Supervised objective: class-balanced squared/hinge terms over the score map."""

from dataclasses import dataclass

import torch

from .core import ChangeMap


@dataclass
class SupLossReport:
    """Loss components as 0-dim tensors so gradients survive the report."""

    total: torch.Tensor
    unchanged_term: torch.Tensor
    changed_term: torch.Tensor
    n_u: int
    n_c: int


def sup_loss(pred, label: torch.Tensor) -> SupLossReport:
    """Class-balanced pixel loss: squared scores on unchanged pixels, squared
    hinge (margin 1) on changed pixels, each normalized by its own pixel count.

    Counts are taken over the whole batch; an absent class contributes 0
    instead of dividing by zero.
    """
    scores = pred.scores if isinstance(pred, ChangeMap) else pred
    if scores.shape != label.shape:
        raise ValueError(f"pred {tuple(scores.shape)} vs label {tuple(label.shape)}")
    y = label.to(scores.dtype)
    n_c = int(y.sum().item())
    n_u = int(y.numel() - n_c)
    zero = scores.sum() * 0.0  # keeps the graph alive for degenerate batches
    unchanged = ((1.0 - y) * scores**2).sum() / n_u if n_u > 0 else zero
    changed = (y * torch.clamp(1.0 - scores, min=0.0) ** 2).sum() / n_c if n_c > 0 else zero
    return SupLossReport(
        total=unchanged + changed,
        unchanged_term=unchanged,
        changed_term=changed,
        n_u=n_u,
        n_c=n_c,
    )
