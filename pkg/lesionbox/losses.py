"""
Training objectives as plain numeric functions with hand-derived gradients.

Losses consume probabilities (not logits), clamp them to [1e-7, 1 - 1e-7]
before taking logs, reduce by the mean and sum with ``math.fsum`` so results
do not depend on element order. Gradients are zero wherever the clamp is
active.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from lesionbox.errors import BadDistribution
from lesionbox.geometry import Box3, enclosing, giou, intersection_volume, volume


PROB_EPS = 1e-7
DICE_EPS = 1e-5
DISTRIBUTION_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ProbField:
    """Predicted probabilities and binary targets of equal length."""

    values: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64).ravel()
        targets = np.asarray(self.targets, dtype=np.float64).ravel()
        if values.size < 1 or values.size != targets.size:
            raise ValueError(f"need equal, non-zero lengths, got {values.size} values and {targets.size} targets")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.all((targets == 0.0) | (targets == 1.0)):
            raise ValueError("targets must be 0 or 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return int(self.values.size)


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _inside_clamp(p: np.ndarray) -> np.ndarray:
    return (p > PROB_EPS) & (p < 1.0 - PROB_EPS)


def bce(field: ProbField) -> float:
    """Mean binary cross-entropy."""
    p = _clamp(field.values)
    t = field.targets
    terms = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    return math.fsum(terms) / len(field)


def bce_grad(field: ProbField) -> np.ndarray:
    p = _clamp(field.values)
    t = field.targets
    grad = (-t / p + (1.0 - t) / (1.0 - p)) / len(field)
    return np.where(_inside_clamp(field.values), grad, 0.0)


def _check_distributions(dists: Sequence[Sequence[float]], classes: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    d = np.asarray(dists, dtype=np.float64)
    raw = np.asarray(classes, dtype=np.float64).ravel()
    if d.ndim != 2 or d.shape[0] < 1 or d.shape[0] != raw.size:
        raise BadDistribution(f"need one probability vector per class index, got {d.shape} and {raw.size}")
    if not np.all(np.isfinite(d)):
        raise BadDistribution("probabilities must be finite")
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise BadDistribution("probabilities must lie in [0, 1]")
    deviation = np.abs(d.sum(axis=1) - 1.0)
    if np.any(deviation > DISTRIBUTION_TOL):
        raise BadDistribution(f"distribution sums deviate from 1 by up to {deviation.max():.3g}")
    if not np.all(np.isfinite(raw)) or np.any(raw != np.floor(raw)):
        raise BadDistribution("class indices must be whole numbers")
    c = raw.astype(np.int64)
    if np.any(c < 0) or np.any(c >= d.shape[1]):
        raise BadDistribution(f"class index out of range for {d.shape[1]} classes")
    return d, c


def cross_entropy(dists: Sequence[Sequence[float]], classes: Sequence[int]) -> float:
    """Mean of -ln(p[class]) over elements."""
    d, c = _check_distributions(dists, classes)
    picked = _clamp(d[np.arange(c.size), c])
    return math.fsum(-np.log(picked)) / c.size


def cross_entropy_grad(dists: Sequence[Sequence[float]], classes: Sequence[int]) -> np.ndarray:
    """Partial derivatives with respect to every entry of `dists`."""
    d, c = _check_distributions(dists, classes)
    rows = np.arange(c.size)
    raw = d[rows, c]
    grad = np.zeros_like(d)
    grad[rows, c] = np.where(_inside_clamp(raw), -1.0 / (_clamp(raw) * c.size), 0.0)
    return grad


def _dice_terms(field: ProbField) -> Tuple[float, float]:
    p = field.values
    t = field.targets
    overlap = math.fsum(p * t)
    total = math.fsum(p) + math.fsum(t)
    return overlap, total


def soft_dice(field: ProbField) -> float:
    """1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps), eps = 1e-5."""
    overlap, total = _dice_terms(field)
    return 1.0 - (2.0 * overlap + DICE_EPS) / (total + DICE_EPS)


def soft_dice_grad(field: ProbField) -> np.ndarray:
    overlap, total = _dice_terms(field)
    num = 2.0 * overlap + DICE_EPS
    den = total + DICE_EPS
    return -(2.0 * field.targets * den - num) / (den * den)


def giou_loss(pred: Box3, gt: Box3) -> float:
    """1 - GIoU, in [0, 2]."""
    return 1.0 - giou(pred, gt)


def _others(values: Sequence[float], k: int) -> float:
    return values[(k + 1) % 3] * values[(k + 2) % 3]


def giou_loss_grad(pred: Box3, gt: Box3) -> np.ndarray:
    """
    Partial derivatives of `giou_loss` with respect to the predicted box
    coordinates (min_x, min_y, min_z, max_x, max_y, max_z).

    The loss is not differentiable where box faces coincide; there the
    one-sided derivative with the predicted face not binding is returned.
    Zero when the union or enclosing box is empty.
    """
    grad = np.zeros(6)
    inter = intersection_volume(pred, gt)
    union = volume(pred) + volume(gt) - inter
    hull_box = enclosing(pred, gt)
    hull = volume(hull_box)
    if union <= 0 or hull <= 0:
        return grad

    pe = pred.extent
    he = hull_box.extent
    ie = [
        max(0.0, min(pred.max[k], gt.max[k]) - max(pred.min[k], gt.min[k]))
        for k in range(3)
    ]
    overlapping = all(e > 0 for e in ie)

    for k in range(3):
        for side, sign in ((0, -1.0), (1, 1.0)):
            coord = pred.min[k] if side == 0 else pred.max[k]
            other = gt.min[k] if side == 0 else gt.max[k]

            d_vol = sign * _others(pe, k)
            # the predicted face bounds the intersection when it lies inside gt's face
            binds_inter = coord > other if side == 0 else coord < other
            d_inter = sign * _others(ie, k) if overlapping and binds_inter else 0.0
            # ... and bounds the hull when it lies outside
            binds_hull = coord < other if side == 0 else coord > other
            d_hull = sign * _others(he, k) if binds_hull else 0.0

            d_union = d_vol - d_inter
            d_iou = (d_inter * union - inter * d_union) / (union * union)
            d_cover = (d_union * hull - union * d_hull) / (hull * hull)
            # loss = 2 - inter/union - union/hull
            grad[side * 3 + k] = -d_iou - d_cover
    return grad
