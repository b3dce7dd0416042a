"""
Synthetic TOF-MRA-like phantoms with implanted aneurysm-like lesions, and a
threshold-and-components baseline detector.

Generation is a pure function of the PhantomSpec. Random numbers come from
``numpy.random.Generator(PCG64(seed))`` and are drawn in this order:

1. per vessel: start point (3 uniforms over the grid), direction (3
   normals), then for every walk step a direction jitter (3 normals);
2. per lesion placement attempt: vessel index (1 integer), path point index
   (1 integer), direction away from the vessel axis (3 normals), ellipsoid
   radii in mm (3 uniforms over lesion_radius_range);
3. when noise_sigma > 0, one normal per voxel in x-fastest order.

Coordinates are voxel indices (voxel i is centred on i); lengths are mm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from lesionbox.errors import PlacementFailure
from lesionbox.geometry import Detection
from lesionbox.labels import LesionInstance, connected_components, find_components, label_mask
from lesionbox.volume import Volume3


log = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 1000
WALK_JITTER = 0.2


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    dims: Tuple[int, int, int] = (64, 64, 64)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_lesions: int = 3
    lesion_radius_range: Tuple[float, float] = (1.5, 3.0)
    vessel_count: int = 3
    background_intensity: float = 0.0
    vessel_intensity: float = 100.0
    lesion_intensity: float = 200.0
    noise_sigma: float = 0.0
    vessel_radius: float = 1.0
    vessel_steps: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "lesion_radius_range", tuple(float(r) for r in self.lesion_radius_range))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be 3 positive voxel counts, got {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be 3 positive lengths, got {self.spacing}")
        if self.n_lesions < 0 or self.vessel_count < 0:
            raise ValueError("n_lesions and vessel_count must be non-negative")
        r_min, r_max = self.lesion_radius_range
        quarter = min(d * s for d, s in zip(self.dims, self.spacing)) / 4.0
        if not 0 < r_min <= r_max:
            raise ValueError(f"lesion radii must satisfy 0 < min <= max, got {self.lesion_radius_range}")
        if r_max > quarter:
            raise ValueError(f"lesion radius {r_max} mm exceeds a quarter of the smallest extent ({quarter} mm)")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.noise_sigma == 0 and not (
            self.lesion_intensity > self.vessel_intensity > self.background_intensity
        ):
            raise ValueError("intensities must satisfy lesion > vessel > background")
        if self.vessel_radius <= 0:
            raise ValueError(f"vessel_radius must be > 0, got {self.vessel_radius}")
        if self.n_lesions > 0 and self.vessel_count == 0:
            raise ValueError("lesions are placed against vessels; vessel_count must be >= 1")

    @property
    def steps(self) -> int:
        return self.vessel_steps if self.vessel_steps is not None else max(self.dims)


@dataclass(frozen=True)
class Phantom:
    image: Volume3
    mask: Volume3
    truth: List[LesionInstance]


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.array([1.0, 0.0, 0.0])
    return v / norm


def _window(center: np.ndarray, reach: np.ndarray, dims: Tuple[int, int, int]) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.maximum(np.floor(center - reach).astype(int), 0)
    hi = np.minimum(np.ceil(center + reach).astype(int) + 1, dims)
    return lo, hi


def _grid(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(lo[0], hi[0]), np.arange(lo[1], hi[1]), np.arange(lo[2], hi[2]), indexing="ij")


def _walk_vessel(rng: np.random.Generator, spec: PhantomSpec) -> np.ndarray:
    dims = np.asarray(spec.dims, dtype=np.float64)
    pos = rng.uniform(0.0, dims - 1.0)
    direction = _unit(rng.normal(size=3))
    points = []
    for _ in range(spec.steps):
        if np.all(pos >= 0) and np.all(pos <= dims - 1):
            points.append(pos.copy())
        direction = _unit(direction + WALK_JITTER * rng.normal(size=3))
        pos = pos + direction
    return np.array(points).reshape(-1, 3)


def _paint_tube(vessels: np.ndarray, path: np.ndarray, spec: PhantomSpec) -> None:
    spacing = np.asarray(spec.spacing)
    reach = spec.vessel_radius / spacing
    for point in path:
        lo, hi = _window(point, reach, spec.dims)
        gx, gy, gz = _grid(lo, hi)
        d2 = (((gx - point[0]) * spacing[0]) ** 2 + ((gy - point[1]) * spacing[1]) ** 2
              + ((gz - point[2]) * spacing[2]) ** 2)
        vessels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= d2 <= spec.vessel_radius ** 2


def _try_lesion(rng: np.random.Generator, spec: PhantomSpec, paths: List[np.ndarray], lesions: np.ndarray) -> bool:
    spacing = np.asarray(spec.spacing)
    dims = np.asarray(spec.dims)
    path = paths[int(rng.integers(len(paths)))]
    point_index = int(rng.integers(max(len(path), 1)))
    u = _unit(rng.normal(size=3))
    radii = rng.uniform(spec.lesion_radius_range[0], spec.lesion_radius_range[1], size=3)
    if len(path) == 0:
        return False

    # ellipsoid extent along u, so the surface touches the vessel wall
    along = 1.0 / np.sqrt(np.sum((u / radii) ** 2))
    center = path[point_index] + u * (spec.vessel_radius + along) / spacing
    reach = radii / spacing
    lo = np.floor(center - reach).astype(int) - 1
    hi = np.ceil(center + reach).astype(int) + 2
    # one-voxel margin inside the volume
    if np.any(lo < 0) or np.any(hi > dims):
        return False

    gx, gy, gz = _grid(lo, hi)
    inside = (((gx - center[0]) * spacing[0] / radii[0]) ** 2 + ((gy - center[1]) * spacing[1] / radii[1]) ** 2
              + ((gz - center[2]) * spacing[2] / radii[2]) ** 2) <= 1.0
    if not inside.any() or np.any(inside[[0, -1], :, :]) or np.any(inside[:, [0, -1], :]) or np.any(inside[:, :, [0, -1]]):
        return False
    if label_mask(inside, 26)[1] != 1:
        return False
    region = lesions[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    grown = ndimage.binary_dilation(inside, structure=np.ones((3, 3, 3), dtype=bool))
    if np.any(grown & region):
        return False
    region |= inside
    return True


def generate(spec: PhantomSpec) -> Phantom:
    """
    Build a phantom image, its lesion mask and the lesion instances.

    Vessels are random-walk tubes of vessel_intensity; lesions are
    axis-aligned ellipsoids of lesion_intensity touching a vessel wall, never
    touching each other (26-adjacency), voxelised by voxel centre.

    Raises:
        PlacementFailure: a lesion could not be placed in 1000 attempts
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    vessels = np.zeros(spec.dims, dtype=bool)
    paths: List[np.ndarray] = []
    for _ in range(spec.vessel_count):
        path = _walk_vessel(rng, spec)
        _paint_tube(vessels, path, spec)
        paths.append(path)

    lesions = np.zeros(spec.dims, dtype=bool)
    for n in range(spec.n_lesions):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            if _try_lesion(rng, spec, paths, lesions):
                break
        else:
            raise PlacementFailure(
                f"could not place lesion {n + 1} of {spec.n_lesions} in {MAX_PLACEMENT_ATTEMPTS} attempts"
            )

    image = np.full(spec.dims, spec.background_intensity, dtype=np.float64)
    image[vessels] = spec.vessel_intensity
    image[lesions] = spec.lesion_intensity
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, size=int(np.prod(spec.dims)))
        image += noise.reshape(spec.dims, order="F")

    image_vol = Volume3(image, spec.spacing)
    mask_vol = Volume3(lesions.astype(np.float64), spec.spacing)
    truth = connected_components(mask_vol, 26)
    log.info("phantom seed %d: %d vessels, %d lesions", spec.seed, spec.vessel_count, len(truth))
    return Phantom(image_vol, mask_vol, truth)


def baseline_detect(image: Volume3, intensity_threshold: float, min_voxels: int = 1) -> List[Detection]:
    """
    Classical detector: threshold, 26-connected components, one box per component.

    Voxels with value > intensity_threshold are foreground; components under
    `min_voxels` are dropped. Score is the component's mean intensity over
    the volume maximum, clamped to [0, 1] (0 when the maximum is not
    positive). Each detection carries its component's centre of mass.
    """
    binary = image.data > intensity_threshold
    comps = find_components(binary, 26)
    if len(comps) == 0:
        return []
    peak = float(image.data.max())
    means = ndimage.mean(image.data, comps.labeled, np.arange(1, len(comps) + 1))
    detections = []
    for k in comps.order:
        if int(comps.sizes[k]) < min_voxels:
            continue
        score = float(np.clip(means[k] / peak, 0.0, 1.0)) if peak > 0 else 0.0
        detections.append(Detection(comps.boxes[k], score, tuple(float(v) for v in comps.centers[k])))  # type: ignore[arg-type]
    detections.sort(key=lambda d: -d.score)
    log.debug("baseline: %d components, %d detections above %s", len(comps), len(detections), intensity_threshold)
    return detections
