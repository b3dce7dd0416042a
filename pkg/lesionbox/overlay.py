from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from lesionbox.geometry import Box3, Detection
from lesionbox.storage import _ensure_parent_dir_exists
from lesionbox.volume import Volume3


log = logging.getLogger(__name__)

DETECTION_COLOR = (230, 40, 40)
TRUTH_COLOR = (40, 200, 60)
WINDOW_PERCENTILES = (1.0, 99.0)


def window_slice(plane: np.ndarray) -> np.ndarray:
    """Map a 2D slice to uint8 between its 1st and 99th percentile."""
    lo, hi = np.percentile(plane, WINDOW_PERCENTILES)
    if hi <= lo:
        return np.zeros(plane.shape, dtype=np.uint8)
    scaled = (plane - lo) / (hi - lo) * 255.0
    return np.clip(np.round(scaled), 0, 255).astype(np.uint8)


def _hits_slice(box: Box3, z: int) -> bool:
    # voxel z spans [z, z + 1]
    return box.min[2] < z + 1 and box.max[2] > z


def _draw_box(draw: ImageDraw.ImageDraw, box: Box3, scale: int, color: Tuple[int, int, int]) -> None:
    x0, y0 = box.min[0] * scale, box.min[1] * scale
    x1, y1 = box.max[0] * scale - 1, box.max[1] * scale - 1
    draw.rectangle([x0, y0, max(x0, x1), max(y0, y1)], outline=color)


def _draw_cross(draw: ImageDraw.ImageDraw, center: Sequence[float], scale: int, color: Tuple[int, int, int]) -> None:
    # voxel-index centre to pixel centre
    cx, cy = (center[0] + 0.5) * scale, (center[1] + 0.5) * scale
    arm = max(2, scale)
    draw.line([cx - arm, cy, cx + arm, cy], fill=color)
    draw.line([cx, cy - arm, cx, cy + arm], fill=color)


def render_slice(
    image: Volume3,
    z: int,
    detections: Sequence[Detection] = (),
    truths: Sequence[Tuple[Box3, Optional[Sequence[float]]]] = (),
    scale: int = 1,
) -> Image.Image:
    """
    Render axial slice `z` with boxes that cross it.

    Args:
        image: volume to show
        z: slice index along the third axis
        detections: drawn in red, with their estimated centres
        truths: (box, centre or None) pairs drawn in green
        scale: integer pixel magnification

    Returns:
        RGB PIL Image, x running left to right and y top to bottom
    """
    nz = image.dims[2]
    if not 0 <= z < nz:
        raise ValueError(f"slice {z} outside 0..{nz - 1}")
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    gray = window_slice(image.data[:, :, z].T)
    img = Image.fromarray(np.ascontiguousarray(gray)).convert("RGB")
    if scale > 1:
        img = img.resize((img.width * scale, img.height * scale), Image.Resampling.NEAREST)
    draw = ImageDraw.Draw(img)
    for box, center in truths:
        if _hits_slice(box, z):
            _draw_box(draw, box, scale, TRUTH_COLOR)
            if center is not None:
                _draw_cross(draw, center, scale, TRUTH_COLOR)
    for det in detections:
        if _hits_slice(det.box, z):
            _draw_box(draw, det.box, scale, DETECTION_COLOR)
            _draw_cross(draw, det.estimated_center(), scale, DETECTION_COLOR)
    return img


def best_slice(detections: Sequence[Detection], truths: Sequence[Tuple[Box3, Optional[Sequence[float]]]], nz: int) -> int:
    """Slice through the top detection's centre, else the first truth's, else the middle slice."""
    if detections:
        z = max(detections, key=lambda d: d.score).estimated_center()[2]
    elif truths:
        box, center = truths[0]
        z = center[2] if center is not None else box.voxel_center()[2]
    else:
        z = (nz - 1) / 2
    return int(min(max(round(z), 0), nz - 1))


def save_png(img: Image.Image, path: Union[str, Path]) -> Path:
    target = Path(path)
    _ensure_parent_dir_exists(target)
    img.save(target, format="PNG")
    log.info("wrote overlay %s", target)
    return target
