from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from lesionbox.errors import VolumeError


Triple = Tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class Volume3:
    """
    A 3D scalar grid with voxel spacing and a voxel-to-world affine.

    `data` is indexed ``data[x, y, z]`` with 0-based indices; flattening it
    with ``order="F"`` gives the x-fastest voxel order used on disk.
    Arrays are copied to float64 and made read-only on construction.

    Args:
        data: 3D array of voxel values
        spacing: voxel size in mm along x, y, z
        affine: 4x4 voxel-index to world-mm transform; defaults to diag(spacing)
    """

    data: np.ndarray
    spacing: Triple
    affine: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise VolumeError(f"volume data must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise VolumeError(f"all dims must be >= 1, got {data.shape}")

        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise VolumeError(f"spacing must be 3 positive finite lengths, got {self.spacing}")

        if self.affine is None:
            affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        else:
            affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise VolumeError(f"affine must be 4x4, got {affine.shape}")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise VolumeError(f"affine last row must be (0, 0, 0, 1), got {affine[3].tolist()}")
        if not np.all(np.isfinite(affine)):
            raise VolumeError("affine must be finite")

        data.setflags(write=False)
        affine.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def dims(self) -> Tuple[int, int, int]:
        nx, ny, nz = self.data.shape
        return (int(nx), int(ny), int(nz))

    @property
    def voxel_volume(self) -> float:
        return float(self.spacing[0] * self.spacing[1] * self.spacing[2])

    def flat(self) -> np.ndarray:
        """Voxel values in x-fastest (then y, then z) order."""
        return self.data.ravel(order="F")

    def with_data(self, data: np.ndarray) -> "Volume3":
        """Same geometry, new voxel values (shape must match)."""
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise VolumeError(f"shape {data.shape} does not match volume dims {self.dims}")
        return Volume3(data, self.spacing, self.affine)

    def voxel_to_world(self, ijk: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        """Map voxel coordinates (one triple or an (N, 3) array) to world mm."""
        pts = np.asarray(ijk, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        world = pts @ self.affine[:3, :3].T + self.affine[:3, 3]
        return world[0] if single else world

    @classmethod
    def from_flat(cls, values: Sequence[float], dims: Sequence[int], spacing: Sequence[float],
                  affine: Optional[np.ndarray] = None) -> "Volume3":
        """Build a volume from x-fastest ordered values."""
        nx, ny, nz = (int(d) for d in dims)
        values = np.asarray(values, dtype=np.float64)
        if values.size != nx * ny * nz:
            raise VolumeError(f"expected {nx * ny * nz} values for dims {tuple(dims)}, got {values.size}")
        return cls(values.reshape((nx, ny, nz), order="F"), tuple(spacing), affine)  # type: ignore[arg-type]
