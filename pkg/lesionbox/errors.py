from __future__ import annotations


class LesionboxError(Exception):
    """Base class for every error raised by the lesionbox package."""


class NiftiError(LesionboxError, ValueError):
    """The payload is not a NIfTI-1 volume this package can read."""


class BadMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class TruncatedData(NiftiError):
    pass


class BadDims(NiftiError):
    pass


class BadHeader(NiftiError):
    """Header fields that cannot describe a valid volume (spacing, transforms, offsets)."""


class VolumeError(LesionboxError, ValueError):
    pass


class EmptyInstance(LesionboxError, ValueError):
    pass


class DegenerateBox(LesionboxError, ValueError):
    pass


class DegenerateGt(DegenerateBox):
    pass


class DegenerateAnchor(DegenerateBox):
    pass


class BadDistribution(LesionboxError, ValueError):
    pass


class PlacementFailure(LesionboxError, RuntimeError):
    pass


class DetectionFileError(LesionboxError, ValueError):
    pass


class ConsistencyError(LesionboxError, ValueError):
    pass


class ConfigError(LesionboxError, ValueError):
    pass
