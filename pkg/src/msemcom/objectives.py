"""Segmentation losses (Dice, label-smoothed cross-entropy, their mix) and
confusion-count metrics (mIoU, mAcc).

Losses take logits (B, N, H, W) and integer labels (B, H, W) and reduce by a
mean over samples. The ``*_from_probs`` variants accept probabilities and
one-hot targets directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .config import LossConfig

LOG_FLOOR = 1e-12


def one_hot(labels, num_classes):
    return F.one_hot(labels.long(), num_classes).permute(0, 3, 1, 2).to(torch.get_default_dtype())


def dice_from_probs(probs, target, skip_empty=True):
    """1 - mean_c 2 sum(m p) / (sum m + sum p), computed per sample then averaged.

    A class with an empty denominator (absent from target and prediction) is
    dropped from the class mean when ``skip_empty``; otherwise it scores 1.
    """
    target = target.to(probs.dtype)
    inter = (probs * target).sum(dim=(2, 3))
    denom = target.sum(dim=(2, 3)) + probs.sum(dim=(2, 3))
    empty = denom == 0
    score = torch.where(empty, torch.ones_like(denom), 2 * inter / denom.masked_fill(empty, 1.0))
    if skip_empty:
        keep = (~empty).to(probs.dtype)
        per_sample = (score * keep).sum(dim=1) / keep.sum(dim=1).clamp_min(1.0)
        per_sample = torch.where(keep.sum(dim=1) > 0, per_sample, torch.ones_like(per_sample))
    else:
        per_sample = score.mean(dim=1)
    return (1 - per_sample).mean()


def dice_loss(logits, labels, skip_empty=True):
    return dice_from_probs(torch.softmax(logits, dim=1), one_hot(labels, logits.shape[1]).to(logits.dtype), skip_empty)


def soft_ce_from_log_probs(log_probs, target, smoothing):
    n = log_probs.shape[1]
    target = target.to(log_probs.dtype)
    smoothed = (1 - smoothing) * target + smoothing / n
    per_pixel = -(smoothed * log_probs.clamp_min(math.log(LOG_FLOOR))).sum(dim=1)
    return per_pixel.mean(dim=(1, 2)).mean()


def soft_ce_from_probs(probs, target, smoothing):
    return soft_ce_from_log_probs(torch.log(probs.clamp_min(LOG_FLOOR)), target, smoothing)


def soft_ce_loss(logits, labels, cfg: LossConfig | float = 0.1):
    smoothing = cfg.smoothing if isinstance(cfg, LossConfig) else float(cfg)
    return soft_ce_from_log_probs(F.log_softmax(logits, dim=1), one_hot(labels, logits.shape[1]).to(logits.dtype), smoothing)


def combine(dice, soft_ce, weight):
    return weight * dice + (1 - weight) * soft_ce


def combined_loss(logits, labels, cfg: LossConfig):
    """weight * Dice + (1 - weight) * soft-CE."""
    return combine(dice_loss(logits, labels, cfg.skip_empty), soft_ce_loss(logits, labels, cfg), cfg.weight)


# -------------------------------------------------------------------- metrics


class MetricError(ValueError):
    pass


@dataclass
class ConfusionCounts:
    matrix: np.ndarray  # (N, N) int64; rows are truth, columns prediction

    @property
    def num_classes(self):
        return self.matrix.shape[0]

    @property
    def tp(self):
        return np.diag(self.matrix).copy()

    @property
    def fp(self):
        return self.matrix.sum(axis=0) - self.tp

    @property
    def fn(self):
        return self.matrix.sum(axis=1) - self.tp

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.matrix + other.matrix)


def confusion(pred, truth, num_classes) -> ConfusionCounts:
    pred = np.asarray(pred.detach().cpu() if torch.is_tensor(pred) else pred).astype(np.int64).ravel()
    truth = np.asarray(truth.detach().cpu() if torch.is_tensor(truth) else truth).astype(np.int64).ravel()
    if pred.shape != truth.shape:
        raise MetricError(f"prediction has {pred.size} pixels, truth has {truth.size}")
    for name, arr in (("prediction", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise MetricError(f"{name} label outside [0, {num_classes})")
    flat = np.bincount(truth * num_classes + pred, minlength=num_classes * num_classes)
    return ConfusionCounts(flat.reshape(num_classes, num_classes))


def _class_mean(num, den, include_background, skip_empty):
    start = 0 if include_background else 1
    num, den = num[start:].astype(np.float64), den[start:].astype(np.float64)
    if skip_empty:
        keep = den > 0
        if not keep.any():
            return 0.0
        return float(np.mean(num[keep] / den[keep]))
    return float(np.mean(np.divide(num, den, out=np.zeros_like(num), where=den > 0)))


def per_class_iou(counts: ConfusionCounts):
    den = counts.tp + counts.fp + counts.fn
    return np.divide(counts.tp, den, out=np.full(den.shape, np.nan), where=den > 0)


def miou(counts: ConfusionCounts, include_background=True, skip_empty=True) -> float:
    """Mean over classes of TP / (TP + FP + FN)."""
    return _class_mean(counts.tp, counts.tp + counts.fp + counts.fn, include_background, skip_empty)


def macc(counts: ConfusionCounts, include_background=True, skip_empty=True) -> float:
    """Mean over classes of TP / (TP + FN)."""
    return _class_mean(counts.tp, counts.tp + counts.fn, include_background, skip_empty)
