from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from lesionbox.volume import Volume3


log = logging.getLogger(__name__)

ZSCORE_EPS = 1e-8
RESAMPLE_MODES = ("trilinear", "nearest")


@dataclass(frozen=True)
class CropResult:
    volume: Volume3
    offset: Tuple[int, int, int]


def _translated_affine(affine: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    shift = np.eye(4)
    shift[:3, 3] = offset
    return affine @ shift


def crop_nonzero(vol: Volume3) -> CropResult:
    """
    Crop to the smallest axis-aligned sub-volume holding every nonzero voxel.

    The affine is shifted so cropped voxels keep their world positions. An
    all-zero volume is returned unchanged with offset (0, 0, 0).
    """
    nonzero = np.argwhere(vol.data != 0)
    if nonzero.size == 0:
        return CropResult(vol, (0, 0, 0))

    lo = nonzero.min(axis=0)
    hi = nonzero.max(axis=0) + 1
    offset = (int(lo[0]), int(lo[1]), int(lo[2]))
    if offset == (0, 0, 0) and tuple(int(h) for h in hi) == vol.dims:
        return CropResult(vol, offset)

    sub = vol.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    cropped = Volume3(sub, vol.spacing, _translated_affine(vol.affine, offset))
    log.debug("cropped %s -> %s at offset %s", vol.dims, cropped.dims, offset)
    return CropResult(cropped, offset)


def zscore(vol: Volume3) -> Volume3:
    """
    Standardise to zero mean and unit population standard deviation over all voxels.

    The divisor is max(std, 1e-8), so a constant volume maps to all zeros.
    """
    data = vol.data
    mean = float(np.mean(data))
    centered = data - mean
    std = float(np.sqrt(np.mean(centered * centered)))
    out = centered / max(std, ZSCORE_EPS)
    return vol.with_data(out)


def _axis_mapping(n_in: int, n_out: int, s_in: float, s_target: float) -> Tuple[float, float]:
    """Return (step, offset) so that output index j samples source index offset + j * step."""
    if n_in > 1 and n_out > 1:
        step = (n_in - 1) / (n_out - 1)
    else:
        step = s_target / s_in
    offset = (n_in - 1) / 2.0 - (n_out - 1) / 2.0 * step
    return step, offset


def resample(vol: Volume3, target_spacing: Sequence[float], mode: str = "trilinear") -> Volume3:
    """
    Resample to a new voxel spacing.

    Output dims are round(dims * spacing / target_spacing), at least 1. Output
    voxel j on an axis samples source position c_in + (j - c_out) * f where c
    is the grid centre index and f = (n_in - 1) / (n_out - 1) (or the spacing
    ratio when either count is 1), so the first and last voxel centres stay
    fixed in world space. Positions outside the source grid clamp to the edge.

    Args:
        vol: source volume
        target_spacing: requested spacing in mm per axis
        mode: "trilinear" for images, "nearest" for masks

    Returns:
        Resampled volume; its spacing is the realised step and its affine
        maps the new grid onto the same world positions.
    """
    if mode not in RESAMPLE_MODES:
        raise ValueError(f"mode must be one of {RESAMPLE_MODES}, got {mode!r}")
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or not all(np.isfinite(t) and t > 0 for t in target):
        raise ValueError(f"target_spacing must be 3 positive lengths, got {target_spacing}")

    if target == vol.spacing:
        return vol

    dims_out = tuple(
        max(1, int(math.floor(n * s / t + 0.5))) for n, s, t in zip(vol.dims, vol.spacing, target)
    )
    mapping = [_axis_mapping(n, m, s, t) for n, m, s, t in zip(vol.dims, dims_out, vol.spacing, target)]
    steps = np.array([m[0] for m in mapping])
    offsets = np.array([m[1] for m in mapping])

    if dims_out == vol.dims and np.all(steps == 1.0) and np.all(offsets == 0.0):
        data = vol.data.copy()
    else:
        order = 1 if mode == "trilinear" else 0
        data = ndimage.affine_transform(
            vol.data,
            np.diag(steps),
            offset=offsets,
            output_shape=dims_out,
            order=order,
            mode="nearest",
            prefilter=False,
        )

    grid = np.eye(4)
    grid[:3, :3] = np.diag(steps)
    grid[:3, 3] = offsets
    affine = vol.affine @ grid
    spacing = tuple(float(s * f) for s, f in zip(vol.spacing, steps))
    log.debug("resampled %s @ %s -> %s @ %s (%s)", vol.dims, vol.spacing, dims_out, spacing, mode)
    return Volume3(data, spacing, affine)


def preprocess_volume(vol: Volume3, target_spacing: Sequence[float], mode: str = "trilinear") -> Tuple[Volume3, Tuple[int, int, int]]:
    """Crop to nonzero voxels, z-score, then resample. Returns (volume, crop offset)."""
    crop = crop_nonzero(vol)
    normalized = zscore(crop.volume)
    log.info("z-scored volume mean %.3g before resampling", float(np.mean(normalized.data)))
    return resample(normalized, target_spacing, mode), crop.offset
