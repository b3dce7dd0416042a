"""
Detection-head box math: multi-level anchor grids over a training patch,
anchor to ground-truth assignment, and box regression encode/decode.

Regression targets are (dx, dy, dz, lw, lh, ld): centre offsets divided by
the anchor extent, and log ratios of gt to anchor extent, per axis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from lesionbox.errors import DegenerateAnchor, DegenerateGt
from lesionbox.geometry import Box3, BoxesLike, as_box_array, centers, iou_matrix


log = logging.getLogger(__name__)

Triple = Tuple[float, float, float]

DEFAULT_PATCH = (256, 224, 56)
DEFAULT_STRIDES = (4, 8, 16)

POSITIVE = 1
NEGATIVE = 0
IGNORE = -1


def default_sizes(stride: int) -> List[Triple]:
    s = float(stride)
    return [(2 * s, 2 * s, 2 * s), (3 * s, 3 * s, 3 * s), (4 * s, 4 * s, 2 * s)]


@dataclass(frozen=True)
class AnchorConfig:
    patch_dims: Tuple[int, int, int] = DEFAULT_PATCH
    levels: Tuple[int, ...] = DEFAULT_STRIDES
    sizes_per_level: Tuple[Tuple[Triple, ...], ...] = field(default=())
    pos_iou: float = 0.5
    neg_iou: float = 0.4

    def __post_init__(self) -> None:
        patch = tuple(int(d) for d in self.patch_dims)
        levels = tuple(int(s) for s in self.levels)
        if len(patch) != 3 or min(patch) < 1:
            raise ValueError(f"patch_dims must be 3 positive voxel counts, got {self.patch_dims}")
        if not levels or min(levels) < 1:
            raise ValueError(f"levels must be positive strides, got {self.levels}")
        sizes = self.sizes_per_level or tuple(tuple(default_sizes(s)) for s in levels)
        sizes = tuple(tuple(tuple(float(v) for v in size) for size in level) for level in sizes)
        if len(sizes) != len(levels):
            raise ValueError(f"need one size list per level: {len(levels)} levels, {len(sizes)} size lists")
        for level in sizes:
            if not level or any(len(size) != 3 or min(size) <= 0 for size in level):
                raise ValueError(f"anchor sizes must be positive edge-length triples, got {level}")
        if not 0.0 <= self.neg_iou <= self.pos_iou <= 1.0:
            raise ValueError(f"need 0 <= neg_iou <= pos_iou <= 1, got {self.neg_iou}, {self.pos_iou}")
        object.__setattr__(self, "patch_dims", patch)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "sizes_per_level", sizes)

    def cells(self, stride: int) -> Tuple[int, int, int]:
        return tuple(-(-d // stride) for d in self.patch_dims)  # type: ignore[return-value]

    def anchor_count(self) -> int:
        total = 0
        for stride, sizes in zip(self.levels, self.sizes_per_level):
            nx, ny, nz = self.cells(stride)
            total += nx * ny * nz * len(sizes)
        return total


@dataclass(frozen=True, eq=False)
class AnchorAssignment:
    """
    Per-anchor state (POSITIVE / NEGATIVE / IGNORE) and matched gt index
    (-1 unless positive), plus the anchor forced positive for each gt.
    """

    state: np.ndarray
    matched_gt: np.ndarray
    max_iou: np.ndarray
    forced_anchor: np.ndarray

    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.state == POSITIVE)

    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.state == NEGATIVE)


def generate_anchors(cfg: AnchorConfig) -> np.ndarray:
    """
    Tile anchors over the patch, one grid per pyramid level.

    A level with stride s has ceil(patch/s) cells per axis, each centred at
    (k + 0.5) * s (clamped to the patch extent). Every configured size is
    placed on every cell. Order: level, then z, y, x, then size.

    Returns:
        (N, 6) box array.
    """
    blocks = []
    for stride, sizes in zip(cfg.levels, cfg.sizes_per_level):
        nx, ny, nz = cfg.cells(stride)
        axis_centers = [
            np.minimum((np.arange(n) + 0.5) * stride, float(extent))
            for n, extent in zip((nx, ny, nz), cfg.patch_dims)
        ]
        size_arr = np.asarray(sizes, dtype=np.float64)
        cz, cy, cx, si = np.meshgrid(
            axis_centers[2], axis_centers[1], axis_centers[0], np.arange(len(sizes)), indexing="ij"
        )
        ctr = np.stack([cx.ravel(), cy.ravel(), cz.ravel()], axis=1)
        half = size_arr[si.ravel()] / 2.0
        blocks.append(np.concatenate([ctr - half, ctr + half], axis=1))
    anchors = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, 6))
    log.debug("generated %d anchors for patch %s, strides %s", len(anchors), cfg.patch_dims, cfg.levels)
    return anchors


def assign_anchors(anchors: BoxesLike, gts: BoxesLike, cfg: AnchorConfig) -> AnchorAssignment:
    """
    Label anchors against ground-truth boxes with fixed IoU thresholds.

    An anchor whose best IoU is >= pos_iou is positive for that gt (lowest gt
    index on ties); below neg_iou it is negative; otherwise ignored. Then each
    gt, in index order, forces its best remaining anchor positive (lowest
    anchor index on ties; nearest centre when every IoU is 0), so every gt
    ends with at least one positive anchor.
    """
    a = as_box_array(anchors)
    g = as_box_array(gts)
    n = len(a)
    state = np.full(n, NEGATIVE, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    if len(g) == 0 or n == 0:
        return AnchorAssignment(state, matched, np.zeros(n), np.zeros(len(g), dtype=np.int64) - 1)

    overlaps = iou_matrix(a, g)
    best_gt = np.argmax(overlaps, axis=1)
    best_iou = overlaps[np.arange(n), best_gt]

    positive = best_iou >= cfg.pos_iou
    state[positive] = POSITIVE
    matched[positive] = best_gt[positive]
    state[~positive & (best_iou >= cfg.neg_iou)] = IGNORE

    forced = np.full(len(g), -1, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    anchor_centers = centers(a)
    gt_centers = centers(g)
    for j in range(len(g)):
        column = np.where(taken, -1.0, overlaps[:, j])
        k = int(np.argmax(column))
        if column[k] <= 0.0:
            dist = np.sum((anchor_centers - gt_centers[j]) ** 2, axis=1)
            dist[taken] = np.inf
            k = int(np.argmin(dist))
        forced[j] = k
        taken[k] = True
        state[k] = POSITIVE
        matched[k] = j

    result = AnchorAssignment(state, matched, best_iou, forced)
    log.debug("%d positive, %d negative of %d anchors", len(result.positives()), len(result.negatives()), n)
    return result


def _center_extent(box: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return (box[..., :3] + box[..., 3:]) / 2.0, box[..., 3:] - box[..., :3]


def encode_boxes(anchors: BoxesLike, gts: BoxesLike) -> np.ndarray:
    """Regression targets for paired rows of `anchors` and `gts`, shape (N, 6)."""
    a = as_box_array(anchors)
    g = as_box_array(gts)
    a_ctr, a_ext = _center_extent(a)
    g_ctr, g_ext = _center_extent(g)
    if np.any(a_ext <= 0):
        raise DegenerateAnchor("anchor has zero extent on some axis")
    if np.any(g_ext <= 0):
        raise DegenerateGt("ground-truth box has zero extent on some axis")
    return np.concatenate([(g_ctr - a_ctr) / a_ext, np.log(g_ext / a_ext)], axis=1)


def decode_boxes(anchors: BoxesLike, targets: np.ndarray) -> np.ndarray:
    """Inverse of `encode_boxes`, shape (N, 6)."""
    a = as_box_array(anchors)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 6)
    a_ctr, a_ext = _center_extent(a)
    if np.any(a_ext <= 0):
        raise DegenerateAnchor("anchor has zero extent on some axis")
    ctr = a_ctr + t[:, :3] * a_ext
    ext = a_ext * np.exp(t[:, 3:])
    return np.concatenate([ctr - ext / 2.0, ctr + ext / 2.0], axis=1)


def encode_box(anchor: Box3, gt: Box3) -> Tuple[float, ...]:
    """(dx, dy, dz, lw, lh, ld) taking `anchor` to `gt`."""
    return tuple(float(v) for v in encode_boxes([anchor], [gt])[0])


def decode_box(anchor: Box3, target: Sequence[float]) -> Box3:
    row = decode_boxes([anchor], np.asarray(target, dtype=np.float64))[0]
    return Box3.from_array(row)

