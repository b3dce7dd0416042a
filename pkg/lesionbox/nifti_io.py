"""
NIfTI-1 single-file (.nii / .nii.gz) reading and writing.

Only the single-file form with magic ``n+1\\0`` is supported. Header fields
are decoded with nibabel's ``Nifti1Header``; voxel bytes are read and written
with numpy so the data layout (x fastest) stays explicit.
"""
from __future__ import annotations

import gzip
import io
import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, Union

import nibabel as nib
import numpy as np

from lesionbox.errors import (
    BadDims,
    BadHeader,
    BadMagic,
    NiftiError,
    TruncatedData,
    UnsupportedDatatype,
)
from lesionbox.storage import write_bytes_atomic
from lesionbox.volume import Volume3


log = logging.getLogger(__name__)

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352
SINGLE_MAGIC = b"n+1\x00"
GZIP_PREFIX = b"\x1f\x8b"

# NIfTI datatype code -> numpy type (byte order comes from the header)
SUPPORTED_DATATYPES: Dict[int, type] = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
}


def _decompress(raw: bytes) -> bytes:
    try:
        return gzip.decompress(raw)
    except EOFError as e:
        raise TruncatedData(f"gzip stream ends early: {e}") from e
    except (OSError, zlib.error) as e:
        raise BadMagic(f"not a NIfTI-1 payload (bad gzip stream: {e})") from e


def _check_prefix(raw: bytes) -> None:
    if len(raw) < HEADER_SIZE:
        if len(raw) >= 4 and HEADER_SIZE not in (struct.unpack("<i", raw[:4])[0], struct.unpack(">i", raw[:4])[0]):
            raise BadMagic("header size field is not 348")
        raise TruncatedData(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    little = struct.unpack("<i", raw[:4])[0]
    big = struct.unpack(">i", raw[:4])[0]
    if HEADER_SIZE not in (little, big):
        raise BadMagic(f"header size field is {little}, expected {HEADER_SIZE}")
    magic = raw[344:348]
    if magic != SINGLE_MAGIC:
        raise BadMagic(f"magic {magic!r} is not {SINGLE_MAGIC!r} (only single-file NIfTI-1 is supported)")


def _parse_header(raw: bytes) -> nib.Nifti1Header:
    try:
        return nib.Nifti1Header.from_fileobj(io.BytesIO(raw[:HEADER_SIZE]), check=False)
    except Exception as e:
        raise BadHeader(f"cannot decode header: {e}") from e


def _read_dims(hdr: nib.Nifti1Header) -> tuple:
    dim = [int(d) for d in hdr["dim"]]
    if dim[0] not in (3, 4):
        raise BadDims(f"dim[0] = {dim[0]}, expected 3 or 4")
    nx, ny, nz = dim[1:4]
    if min(nx, ny, nz) < 1:
        raise BadDims(f"spatial dims must be >= 1, got {(nx, ny, nz)}")
    if dim[0] == 4 and dim[4] != 1:
        raise BadDims(f"4-D file with dim[4] = {dim[4]} (only a single volume is supported)")
    return nx, ny, nz


def _read_spacing(hdr: nib.Nifti1Header) -> tuple:
    pixdim = [float(p) for p in hdr["pixdim"][1:4]]
    if not all(np.isfinite(p) and p > 0 for p in pixdim):
        raise BadHeader(f"pixdim[1..3] must be positive and finite, got {pixdim}")
    return tuple(pixdim)


def _read_affine(hdr: nib.Nifti1Header, spacing: tuple) -> np.ndarray:
    if int(hdr["sform_code"]) > 0:
        affine = np.asarray(hdr.get_sform(), dtype=np.float64)
        source = "sform"
    elif int(hdr["qform_code"]) > 0:
        try:
            affine = np.asarray(hdr.get_qform(), dtype=np.float64)
        except Exception as e:
            raise BadHeader(f"cannot decode qform: {e}") from e
        source = "qform"
        log.debug("sform_code is 0, using qform")
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        source = "pixdim"
    if not np.all(np.isfinite(affine)):
        raise BadHeader(f"{source} affine is not finite")
    affine[3] = (0.0, 0.0, 0.0, 1.0)
    return affine


def read_nifti(raw: bytes) -> Volume3:
    """
    Parse a single-file NIfTI-1 payload (optionally gzip-compressed).

    Voxel values are converted to float64 and scl_slope/scl_inter applied when
    the slope is finite and non-zero. Spacing comes from pixdim[1..3]; the
    affine from the sform when sform_code > 0, else the qform when
    qform_code > 0, else diag(spacing).

    Raises:
        BadMagic, UnsupportedDatatype, TruncatedData, BadDims, BadHeader
    """
    raw = bytes(raw)
    if raw[:2] == GZIP_PREFIX:
        raw = _decompress(raw)
    _check_prefix(raw)
    hdr = _parse_header(raw)

    code = int(hdr["datatype"])
    if code not in SUPPORTED_DATATYPES:
        raise UnsupportedDatatype(f"datatype code {code} is not one of {sorted(SUPPORTED_DATATYPES)}")
    nx, ny, nz = _read_dims(hdr)
    spacing = _read_spacing(hdr)
    affine = _read_affine(hdr, spacing)

    vox_offset = float(hdr["vox_offset"])
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE:
        raise BadHeader(f"vox_offset {vox_offset} is before the end of the header")
    offset = int(vox_offset)
    if offset > SINGLE_FILE_OFFSET:
        log.warning("skipping %d bytes of header extensions", offset - SINGLE_FILE_OFFSET)

    dtype = np.dtype(SUPPORTED_DATATYPES[code]).newbyteorder(hdr.endianness)
    count = nx * ny * nz
    needed = offset + count * dtype.itemsize
    if len(raw) < needed:
        raise TruncatedData(f"data section needs {needed - offset} bytes, got {max(len(raw) - offset, 0)}")

    values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float64)
    slope = float(hdr["scl_slope"])
    if np.isfinite(slope) and slope != 0.0:
        inter = float(hdr["scl_inter"])
        if not np.isfinite(inter):
            inter = 0.0
        values = values * slope + inter

    return Volume3(values.reshape((nx, ny, nz), order="F"), spacing, affine)


def write_nifti(vol: Volume3) -> bytes:
    """
    Encode a volume as an uncompressed single-file NIfTI-1 payload.

    Data is written as float32; the sform carries `vol.affine` (code 2,
    aligned), pixdim carries `vol.spacing`, the qform is left unset.
    """
    hdr = nib.Nifti1Header()
    hdr.set_data_dtype(np.float32)
    hdr.set_data_shape(vol.dims)
    hdr.set_zooms(vol.spacing)
    hdr.set_sform(np.asarray(vol.affine), code=2)
    hdr.set_qform(None, code=0)
    hdr.set_xyzt_units("mm")
    hdr["vox_offset"] = SINGLE_FILE_OFFSET
    hdr["scl_slope"] = 0.0
    hdr["scl_inter"] = 0.0

    buffer = io.BytesIO()
    hdr.write_to(buffer)
    buffer.write(vol.flat().astype(hdr.get_data_dtype()).tobytes())
    return buffer.getvalue()


def scan_id_from_path(path: Union[str, Path]) -> str:
    """File name without the .nii / .nii.gz suffix."""
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def load_volume(path: Union[str, Path]) -> Volume3:
    """Read a .nii or .nii.gz file from disk."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"NIfTI file not found: {path}")
    return read_nifti(path.read_bytes())


def save_volume(vol: Volume3, path: Union[str, Path]) -> Path:
    """Write a volume atomically; `.nii.gz` targets are gzip-compressed with mtime 0."""
    path = Path(path)
    payload = write_nifti(vol)
    if path.name.endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    return write_bytes_atomic(path, payload)


__all__ = [
    "NiftiError",
    "read_nifti",
    "write_nifti",
    "load_volume",
    "save_volume",
    "scan_id_from_path",
]
