from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from lesionbox.errors import EmptyInstance
from lesionbox.geometry import Box3, box_from_voxels
from lesionbox.volume import Volume3


log = logging.getLogger(__name__)

Triple = Tuple[float, float, float]

CONNECTIVITIES = (6, 26)
DEFAULT_CONNECTIVITY = 26


@dataclass(frozen=True)
class LesionInstance:
    id: int
    voxel_count: int
    box: Box3
    center: Triple
    volume_mm3: float
    center_world: Triple


def structure_for(connectivity: int) -> np.ndarray:
    """3x3x3 adjacency structure: faces only (6) or faces, edges and corners (26)."""
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, got {connectivity}")


def center_of_mass(voxels: Sequence[Sequence[int]]) -> Triple:
    """Unweighted mean of voxel indices per axis."""
    pts = np.asarray(voxels, dtype=np.float64)
    if pts.size == 0:
        raise EmptyInstance("center of mass of an empty voxel set")
    pts = pts.reshape(-1, 3)
    n = pts.shape[0]
    return (
        math.fsum(pts[:, 0]) / n,
        math.fsum(pts[:, 1]) / n,
        math.fsum(pts[:, 2]) / n,
    )


def compare_centers(predicted: Sequence[float], truth: Sequence[float], spacing: Sequence[float]) -> float:
    """Euclidean distance in mm between two voxel-index centres."""
    d = [(p - t) * s for p, t, s in zip(predicted, truth, spacing)]
    return math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])


def label_mask(binary: np.ndarray, connectivity: int = DEFAULT_CONNECTIVITY) -> Tuple[np.ndarray, int]:
    """scipy labelling of a boolean 3D array; labels follow raster order of each component's first voxel."""
    labeled, count = ndimage.label(binary, structure=structure_for(connectivity))
    return labeled, int(count)


@dataclass(frozen=True, eq=False)
class Components:
    """
    Per-component statistics of a labelled array. Index k describes label
    k + 1; `order` lists indices by descending size, raster order on ties.
    """

    labeled: np.ndarray
    sizes: np.ndarray
    centers: np.ndarray
    boxes: Tuple[Box3, ...]
    order: Tuple[int, ...]

    def __len__(self) -> int:
        return int(self.sizes.size)


def find_components(binary: np.ndarray, connectivity: int = DEFAULT_CONNECTIVITY) -> Components:
    labeled, count = label_mask(binary, connectivity)
    sizes = np.bincount(labeled.ravel(), minlength=count + 1)[1:]
    xs, ys, zs = np.nonzero(labeled)
    member = labeled[xs, ys, zs]
    # integer index sums are exact in float64
    sums = np.stack(
        [np.bincount(member, weights=axis.astype(np.float64), minlength=count + 1)[1:] for axis in (xs, ys, zs)],
        axis=1,
    )
    ctrs = sums / np.maximum(sizes, 1)[:, None] if count else np.zeros((0, 3))
    boxes = tuple(
        box_from_voxels((sl[0].start, sl[1].start, sl[2].start), (sl[0].stop - 1, sl[1].stop - 1, sl[2].stop - 1))
        for sl in ndimage.find_objects(labeled)
    )
    order = tuple(sorted(range(count), key=lambda k: -int(sizes[k])))
    return Components(labeled, sizes, ctrs, boxes, order)


def connected_components(mask: Volume3, connectivity: int = DEFAULT_CONNECTIVITY, min_voxels: int = 1) -> List[LesionInstance]:
    """
    Split the nonzero voxels of a mask into lesion instances.

    Components smaller than `min_voxels` are dropped. Instances are sorted by
    descending voxel count (ties keep raster order of their first voxel,
    x then y then z) and numbered 1..K in that order.

    Args:
        mask: annotation volume; any nonzero value marks lesion
        connectivity: 6 (faces) or 26 (faces, edges, corners)
        min_voxels: smallest component kept

    Returns:
        Lesion instances with tight boxes, centres of mass and volumes.
    """
    comps = find_components(mask.data != 0, connectivity)
    instances: List[LesionInstance] = []
    for k in comps.order:
        n = int(comps.sizes[k])
        if n < min_voxels:
            continue
        center = tuple(float(v) for v in comps.centers[k])
        instances.append(
            LesionInstance(
                id=len(instances) + 1,
                voxel_count=n,
                box=comps.boxes[k],
                center=center,  # type: ignore[arg-type]
                volume_mm3=n * mask.voxel_volume,
                center_world=tuple(float(v) for v in mask.voxel_to_world(center)),  # type: ignore[arg-type]
            )
        )
    log.debug("found %d components (%d kept, connectivity %d)", len(comps), len(instances), connectivity)
    return instances
