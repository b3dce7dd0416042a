"""
Pipeline settings: built-in defaults, optional TOML/YAML config file, and
environment variables. Command-line flags override whatever is loaded here.

Example ``lesionbox.toml``::

    iou_threshold = 0.3
    fpps = [0.25, 0.5, 1.0, 2.0]
    threshold = 150

    [anchors]
    patch_dims = [256, 224, 56]
    levels = [4, 8, 16]

    [phantom]
    seed = 7
    n_lesions = 2
"""
from __future__ import annotations

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from lesionbox.anchors import AnchorConfig
from lesionbox.errors import ConfigError
from lesionbox.froc import DEFAULT_IOU_THRESHOLD, DEFAULT_OPERATING_POINTS
from lesionbox.geometry import DEFAULT_NMS_IOU
from lesionbox.labels import CONNECTIVITIES, DEFAULT_CONNECTIVITY
from lesionbox.phantom import PhantomSpec
from lesionbox.preprocess import RESAMPLE_MODES


log = logging.getLogger(__name__)

THREADS_ENV = "LESIONBOX_THREADS"
LOG_LEVEL_ENV = "LESIONBOX_LOG_LEVEL"
DEFAULT_BASELINE_THRESHOLD = 150.0
MAX_DEFAULT_THREADS = 4


@dataclass(frozen=True)
class PipelineConfig:
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    fpps: Tuple[float, ...] = DEFAULT_OPERATING_POINTS
    connectivity: int = DEFAULT_CONNECTIVITY
    nms_iou: float = DEFAULT_NMS_IOU
    min_voxels: int = 1
    threshold: float = DEFAULT_BASELINE_THRESHOLD
    mode: str = "trilinear"
    target_spacing: Optional[Tuple[float, float, float]] = None
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)

    def __post_init__(self) -> None:
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold must be in [0, 1], got {self.iou_threshold}")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ConfigError(f"nms_iou must be in [0, 1], got {self.nms_iou}")
        if self.connectivity not in CONNECTIVITIES:
            raise ConfigError(f"connectivity must be one of {CONNECTIVITIES}, got {self.connectivity}")
        if self.min_voxels < 1:
            raise ConfigError(f"min_voxels must be >= 1, got {self.min_voxels}")
        if self.mode not in RESAMPLE_MODES:
            raise ConfigError(f"mode must be one of {RESAMPLE_MODES}, got {self.mode!r}")
        if any(q < 0 for q in self.fpps):
            raise ConfigError(f"operating points must be >= 0, got {self.fpps}")
        if self.target_spacing is not None and (len(self.target_spacing) != 3 or min(self.target_spacing) <= 0):
            raise ConfigError(f"target_spacing must be 3 positive lengths, got {self.target_spacing}")


def _read_mapping(path: Path) -> Dict[str, Any]:
    suffix = path.suffix.lower()
    text = path.read_text(encoding="utf-8")
    try:
        if suffix == ".toml":
            raw = tomllib.loads(text)
        elif suffix in (".yaml", ".yml"):
            raw = yaml.safe_load(text) or {}
        else:
            raise ConfigError(f"{path}: unsupported config format {suffix!r} (use .toml, .yaml or .yml)")
    except (tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw


def _section(cls: type, values: Any, name: str, base: Any) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    converted = {k: _tupled(v) for k, v in values.items()}
    try:
        return replace(base, **converted)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}]: {e}") from e


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def from_mapping(raw: Dict[str, Any], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Overlay a decoded mapping onto `base` (defaults when None)."""
    base = base or PipelineConfig()
    values = dict(raw)
    anchors = base.anchors
    if "anchors" in values:
        section = values.pop("anchors")
        if isinstance(section, dict) and "levels" in section and "sizes_per_level" not in section:
            # sizes follow the new strides
            try:
                anchors = replace(anchors, levels=_tupled(section["levels"]), sizes_per_level=())
            except (TypeError, ValueError) as e:
                raise ConfigError(f"[anchors]: {e}") from e
        anchors = _section(AnchorConfig, section, "anchors", anchors)
    phantom = _section(PhantomSpec, values.pop("phantom"), "phantom", base.phantom) if "phantom" in values else base.phantom
    top = {f.name for f in fields(PipelineConfig)} - {"anchors", "phantom"}
    unknown = sorted(set(values) - top)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        return replace(base, anchors=anchors, phantom=phantom, **{k: _tupled(v) for k, v in values.items()})
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path: Union[str, Path, None] = None) -> PipelineConfig:
    """Defaults, overlaid with the TOML or YAML file at `path` when given."""
    if path is None:
        return PipelineConfig()
    target = Path(path)
    if not target.exists():
        raise ConfigError(f"config file not found: {target}")
    cfg = from_mapping(_read_mapping(target))
    log.info("loaded config from %s", target)
    return cfg


def thread_count() -> int:
    """Worker threads for per-file work; LESIONBOX_THREADS caps it."""
    default = max(1, min(MAX_DEFAULT_THREADS, os.cpu_count() or 1))
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        log.warning("%s=%r is not an integer; using 1 thread", THREADS_ENV, raw)
        return 1
    if value < 1:
        log.warning("%s=%r is below 1; using 1 thread", THREADS_ENV, raw)
        return 1
    return value


def log_level(verbose: bool = False) -> int:
    """DEBUG with -v, else WARNING; LESIONBOX_LOG_LEVEL (a level name) wins when set."""
    raw = os.environ.get(LOG_LEVEL_ENV)
    if raw:
        level = logging.getLevelName(raw.strip().upper())
        if isinstance(level, int):
            return level
        log.warning("%s=%r is not a logging level; ignored", LOG_LEVEL_ENV, raw)
    return logging.DEBUG if verbose else logging.WARNING
