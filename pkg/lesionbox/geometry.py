"""
Axis-aligned 3D box algebra: volume, intersection, IoU, GIoU and greedy NMS.

Boxes live in continuous voxel coordinates. Voxel (i, j, k) covers the box
[(i, j, k), (i+1, j+1, k+1)], so a tight integer box around a component has a
volume equal to its bounding-box voxel count. Box arrays are ``(N, 6)``
float64 arrays laid out as (min_x, min_y, min_z, max_x, max_y, max_z).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np


log = logging.getLogger(__name__)

Triple = Tuple[float, float, float]

DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class Box3:
    min: Triple
    max: Triple

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError(f"box corners must have 3 coordinates, got {self.min}, {self.max}")
        if not all(np.isfinite(lo)) or not all(np.isfinite(hi)):
            raise ValueError(f"box corners must be finite, got {lo}, {hi}")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"box max must be >= min on every axis, got {lo}, {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> Triple:
        return (self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2])

    @property
    def center(self) -> Triple:
        return (
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        )

    def voxel_center(self) -> Triple:
        """Box centre in voxel-index coordinates (voxel i spans [i, i+1])."""
        cx, cy, cz = self.center
        return (cx - 0.5, cy - 0.5, cz - 0.5)

    def as_array(self) -> np.ndarray:
        return np.array(self.min + self.max, dtype=np.float64)

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "Box3":
        return cls(tuple(row[:3]), tuple(row[3:6]))  # type: ignore[arg-type]


@dataclass(frozen=True)
class Detection:
    """A scored box; `center` optionally holds the voxel-index centre of mass it was built from."""

    box: Box3
    score: float
    center: Optional[Triple] = None

    def __post_init__(self) -> None:
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "score", score)
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def estimated_center(self) -> Triple:
        return self.center if self.center is not None else self.box.voxel_center()


def box_from_voxels(ijk_min: Sequence[int], ijk_max: Sequence[int]) -> Box3:
    """Tight box around voxels with inclusive index bounds `ijk_min`..`ijk_max`."""
    return Box3(tuple(float(v) for v in ijk_min), tuple(float(v) + 1.0 for v in ijk_max))  # type: ignore[arg-type]


def volume(b: Box3) -> float:
    ex, ey, ez = b.extent
    return ex * ey * ez


def intersection_volume(a: Box3, b: Box3) -> float:
    dx = min(a.max[0], b.max[0]) - max(a.min[0], b.min[0])
    dy = min(a.max[1], b.max[1]) - max(a.min[1], b.min[1])
    dz = min(a.max[2], b.max[2]) - max(a.min[2], b.min[2])
    if dx <= 0 or dy <= 0 or dz <= 0:
        return 0.0
    return dx * dy * dz


def enclosing(a: Box3, b: Box3) -> Box3:
    """Smallest axis-aligned box containing both boxes."""
    return Box3(
        (min(a.min[0], b.min[0]), min(a.min[1], b.min[1]), min(a.min[2], b.min[2])),
        (max(a.max[0], b.max[0]), max(a.max[1], b.max[1]), max(a.max[2], b.max[2])),
    )


def iou(a: Box3, b: Box3) -> float:
    """Intersection volume over union volume; 0 when the union is empty."""
    inter = intersection_volume(a, b)
    union = volume(a) + volume(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: Box3, b: Box3) -> float:
    """
    Generalised IoU: iou - (|C| - |a u b|) / |C| with C the enclosing box.

    Falls back to the IoU rule when |C| is 0. The penalty is clamped at 0 so
    giou <= iou holds exactly in floating point.
    """
    inter = intersection_volume(a, b)
    union = volume(a) + volume(b) - inter
    overlap = inter / union if union > 0 else 0.0
    hull = volume(enclosing(a, b))
    if hull <= 0:
        return overlap
    return overlap - max(hull - union, 0.0) / hull


def nms(dets: Sequence[Detection], iou_threshold: float = DEFAULT_NMS_IOU) -> List[Detection]:
    """
    Greedy non-maximum suppression.

    Repeatedly keeps the highest-scoring remaining detection (earlier input
    index wins ties) and drops every remaining detection whose IoU with it
    exceeds `iou_threshold`. Output is in descending score order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: List[Detection] = []
    suppressed = [False] * len(dets)
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(dets[i])
        for j in order[pos + 1:]:
            if not suppressed[j] and iou(dets[i].box, dets[j].box) > iou_threshold:
                suppressed[j] = True
    log.debug("nms kept %d of %d detections at iou %.3f", len(kept), len(dets), iou_threshold)
    return kept


BoxesLike = Union[np.ndarray, Sequence[Box3]]


def as_box_array(boxes: BoxesLike) -> np.ndarray:
    """Convert a sequence of Box3 (or an array) to an (N, 6) float64 array."""
    if isinstance(boxes, np.ndarray):
        arr = np.asarray(boxes, dtype=np.float64)
    else:
        arr = np.array([b.as_array() for b in boxes], dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 6), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ValueError(f"box array must have shape (N, 6), got {arr.shape}")
    return arr


def volumes(boxes: np.ndarray) -> np.ndarray:
    ext = boxes[:, 3:] - boxes[:, :3]
    return ext[:, 0] * ext[:, 1] * ext[:, 2]


def iou_matrix(boxes_a: BoxesLike, boxes_b: BoxesLike) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b)); same zero-union rule as `iou`."""
    a = as_box_array(boxes_a)
    b = as_box_array(boxes_b)
    lo = np.maximum(a[:, None, :3], b[None, :, :3])
    hi = np.minimum(a[:, None, 3:], b[None, :, 3:])
    ext = np.clip(hi - lo, 0.0, None)
    inter = ext[..., 0] * ext[..., 1] * ext[..., 2]
    union = volumes(a)[:, None] + volumes(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def centers(boxes: np.ndarray) -> np.ndarray:
    return (boxes[:, :3] + boxes[:, 3:]) / 2.0
