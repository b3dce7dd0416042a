"""
JSON interchange for detections and ground truth.

A detection file looks like::

    {"scans": [{"id": "scan_01",
                "spacing": [0.5, 0.5, 0.7],
                "detections": [{"box": {"min": [..], "max": [..]}, "score": 0.9}],
                "truth": [{"box": {"min": [..], "max": [..]}, "center": [..]}]}]}

"detections", "truth" and "spacing" are optional per scan. Truth entries may
also carry "voxel_count", "volume_mm3" and "center_world"; detections may
carry "center". Any other key is an error.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from lesionbox.errors import ConsistencyError, DetectionFileError
from lesionbox.froc import ScanResult
from lesionbox.geometry import Box3, Detection
from lesionbox.labels import LesionInstance
from lesionbox.storage import write_text_atomic


log = logging.getLogger(__name__)

Triple = Tuple[float, float, float]

SCAN_KEYS = {"id", "spacing", "detections", "truth"}
DETECTION_KEYS = {"box", "score", "center"}
TRUTH_KEYS = {"box", "center", "voxel_count", "volume_mm3", "center_world"}
BOX_KEYS = {"min", "max"}


@dataclass(frozen=True)
class TruthEntry:
    box: Box3
    center: Optional[Triple] = None
    voxel_count: Optional[int] = None
    volume_mm3: Optional[float] = None
    center_world: Optional[Triple] = None


@dataclass(frozen=True)
class ScanEntry:
    id: str
    detections: Optional[Tuple[Detection, ...]] = None
    truth: Optional[Tuple[TruthEntry, ...]] = None
    spacing: Optional[Triple] = None


@dataclass(frozen=True)
class DetectionFile:
    scans: Tuple[ScanEntry, ...] = ()

    def scan(self, scan_id: str) -> Optional[ScanEntry]:
        for s in self.scans:
            if s.id == scan_id:
                return s
        return None

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.scans]


def _fail(where: str, message: str) -> DetectionFileError:
    return DetectionFileError(f"{where}: {message}")


def _check_keys(obj: Any, allowed: set, where: str) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        raise _fail(where, f"expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise _fail(where, f"unknown key(s) {', '.join(unknown)}")
    return obj


def _triple(value: Any, where: str) -> Triple:
    if not isinstance(value, list) or len(value) != 3:
        raise _fail(where, "expected a list of 3 numbers")
    out = []
    for v in value:
        # bool is an int subclass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _fail(where, f"expected a number, got {v!r}")
        out.append(float(v))
    return tuple(out)  # type: ignore[return-value]


def _box(value: Any, where: str) -> Box3:
    obj = _check_keys(value, BOX_KEYS, where)
    if "min" not in obj or "max" not in obj:
        raise _fail(where, "box needs both 'min' and 'max'")
    try:
        return Box3(_triple(obj["min"], f"{where}.min"), _triple(obj["max"], f"{where}.max"))
    except DetectionFileError:
        raise
    except ValueError as e:
        raise _fail(where, str(e)) from e


def _detection(value: Any, where: str) -> Detection:
    obj = _check_keys(value, DETECTION_KEYS, where)
    if "box" not in obj or "score" not in obj:
        raise _fail(where, "detection needs 'box' and 'score'")
    score = obj["score"]
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise _fail(where, f"score must be a number, got {score!r}")
    center = _triple(obj["center"], f"{where}.center") if "center" in obj else None
    try:
        return Detection(_box(obj["box"], f"{where}.box"), float(score), center)
    except DetectionFileError:
        raise
    except ValueError as e:
        raise _fail(where, str(e)) from e


def _truth(value: Any, where: str) -> TruthEntry:
    obj = _check_keys(value, TRUTH_KEYS, where)
    if "box" not in obj:
        raise _fail(where, "truth entry needs 'box'")
    count = obj.get("voxel_count")
    if count is not None and (isinstance(count, bool) or not isinstance(count, int) or count < 1):
        raise _fail(where, f"voxel_count must be a positive integer, got {count!r}")
    vol = obj.get("volume_mm3")
    if vol is not None and (isinstance(vol, bool) or not isinstance(vol, (int, float)) or vol < 0):
        raise _fail(where, f"volume_mm3 must be a non-negative number, got {vol!r}")
    return TruthEntry(
        box=_box(obj["box"], f"{where}.box"),
        center=_triple(obj["center"], f"{where}.center") if "center" in obj else None,
        voxel_count=count,
        volume_mm3=float(vol) if vol is not None else None,
        center_world=_triple(obj["center_world"], f"{where}.center_world") if "center_world" in obj else None,
    )


def _scan(value: Any, where: str) -> ScanEntry:
    obj = _check_keys(value, SCAN_KEYS, where)
    scan_id = obj.get("id")
    if not isinstance(scan_id, str) or not scan_id:
        raise _fail(where, "scan needs a non-empty string 'id'")
    where = f"scan {scan_id!r}"
    spacing = None
    if "spacing" in obj:
        spacing = _triple(obj["spacing"], f"{where}.spacing")
        if min(spacing) <= 0:
            raise _fail(where, f"spacing must be positive, got {list(spacing)}")
    detections = truth = None
    if "detections" in obj:
        if not isinstance(obj["detections"], list):
            raise _fail(where, "'detections' must be a list")
        detections = tuple(_detection(d, f"{where}.detections[{i}]") for i, d in enumerate(obj["detections"]))
    if "truth" in obj:
        if not isinstance(obj["truth"], list):
            raise _fail(where, "'truth' must be a list")
        truth = tuple(_truth(t, f"{where}.truth[{i}]") for i, t in enumerate(obj["truth"]))
    return ScanEntry(scan_id, detections, truth, spacing)


def parse_document(doc: Any) -> DetectionFile:
    """Validate a decoded JSON document; scans come back sorted by id, detections by descending score."""
    obj = _check_keys(doc, {"scans"}, "document")
    scans_raw = obj.get("scans")
    if not isinstance(scans_raw, list):
        raise _fail("document", "'scans' must be a list")
    scans = [_scan(s, f"scans[{i}]") for i, s in enumerate(scans_raw)]
    seen = set()
    for s in scans:
        if s.id in seen:
            raise _fail("document", f"duplicate scan id {s.id!r}")
        seen.add(s.id)
    return normalized(DetectionFile(tuple(scans)))


def normalized(df: DetectionFile) -> DetectionFile:
    """Stable order: scans by id, detections by descending score (input order on ties)."""
    scans = []
    for s in sorted(df.scans, key=lambda s: s.id):
        dets = None if s.detections is None else tuple(sorted(s.detections, key=lambda d: -d.score))
        scans.append(ScanEntry(s.id, dets, s.truth, s.spacing))
    return DetectionFile(tuple(scans))


def _box_doc(box: Box3) -> Dict[str, List[float]]:
    return {"min": list(box.min), "max": list(box.max)}


def to_document(df: DetectionFile) -> Dict[str, Any]:
    scans = []
    for s in normalized(df).scans:
        entry: Dict[str, Any] = {"id": s.id}
        if s.spacing is not None:
            entry["spacing"] = list(s.spacing)
        if s.detections is not None:
            entry["detections"] = []
            for d in s.detections:
                det: Dict[str, Any] = {"box": _box_doc(d.box), "score": d.score}
                if d.center is not None:
                    det["center"] = list(d.center)
                entry["detections"].append(det)
        if s.truth is not None:
            entry["truth"] = []
            for t in s.truth:
                item: Dict[str, Any] = {"box": _box_doc(t.box)}
                if t.center is not None:
                    item["center"] = list(t.center)
                if t.voxel_count is not None:
                    item["voxel_count"] = t.voxel_count
                if t.volume_mm3 is not None:
                    item["volume_mm3"] = t.volume_mm3
                if t.center_world is not None:
                    item["center_world"] = list(t.center_world)
                entry["truth"].append(item)
        scans.append(entry)
    return {"scans": scans}


def dumps(df: DetectionFile) -> str:
    return json.dumps(to_document(df), ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def loads(text: str, source: str = "<string>") -> DetectionFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DetectionFileError(f"{source}: malformed JSON ({e})") from e
    try:
        return parse_document(doc)
    except DetectionFileError as e:
        raise DetectionFileError(f"{source}: {e}") from e


def save_detection_file(df: DetectionFile, path: Union[str, Path]) -> Path:
    """Write the document as sorted-key, indented JSON and return the path."""
    return write_text_atomic(path, dumps(df))


def load_detection_file(path: Union[str, Path]) -> DetectionFile:
    target = Path(path)
    if not target.exists():
        raise FileNotFoundError(str(target))
    with target.open("r", encoding="utf-8") as f:
        return loads(f.read(), str(target))


def truth_from_instances(instances: Iterable[LesionInstance]) -> Tuple[TruthEntry, ...]:
    return tuple(
        TruthEntry(
            box=inst.box,
            center=inst.center,
            voxel_count=inst.voxel_count,
            volume_mm3=inst.volume_mm3,
            center_world=inst.center_world,
        )
        for inst in instances
    )


def scan_results(detections: DetectionFile, truth: Optional[DetectionFile] = None) -> List[ScanResult]:
    """
    Pair detections with ground truth per scan.

    With a separate `truth` file, every scan listed there is evaluated
    (scans without detections contribute misses only) and detection scan ids
    must all be present in it. Without one, each scan of `detections`
    supplies its own truth.

    Raises:
        ConsistencyError: a scan has detections but no truth entry
    """
    source = truth if truth is not None else detections
    missing = sorted(set(detections.ids) - set(source.ids))
    if missing:
        raise ConsistencyError(f"detections for scan id(s) absent from truth: {', '.join(missing)}")

    results: List[ScanResult] = []
    for t in normalized(source).scans:
        d = detections.scan(t.id)
        dets: Sequence[Detection] = (d.detections or ()) if d is not None else ()
        gts = t.truth or ()
        spacing = t.spacing or (d.spacing if d is not None else None) or (1.0, 1.0, 1.0)
        results.append(
            ScanResult(
                scan_id=t.id,
                gts=tuple(g.box for g in gts),
                detections=tuple(dets),
                gt_centers=tuple(g.center for g in gts),
                spacing=spacing,
            )
        )
    log.debug("paired %d scans for evaluation", len(results))
    return results
