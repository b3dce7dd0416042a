from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

from lesionbox.config import PipelineConfig, load_config, log_level, thread_count
from lesionbox.errors import ConsistencyError, DetectionFileError, LesionboxError, NiftiError
from lesionbox.froc import center_table, center_table_csv, froc_report
from lesionbox.geometry import nms
from lesionbox.interchange import (
    DetectionFile,
    ScanEntry,
    dumps,
    load_detection_file,
    save_detection_file,
    scan_results,
    truth_from_instances,
)
from lesionbox.labels import connected_components
from lesionbox.nifti_io import load_volume, save_volume, scan_id_from_path
from lesionbox.overlay import best_slice, render_slice, save_png
from lesionbox.phantom import baseline_detect, generate
from lesionbox.preprocess import RESAMPLE_MODES, preprocess_volume
from lesionbox.storage import expand_inputs, write_text_atomic
from lesionbox.volume import Volume3


log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONSISTENCY = 3


def _number_list(kind: Callable[[str], float], count: Optional[int] = None) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        try:
            values = tuple(kind(v) for v in text.split(",") if v.strip() != "")
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
        if count is not None and len(values) != count:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated values, got {text!r}")
        return values
    return parse


def _load(path: Path) -> Volume3:
    try:
        return load_volume(path)
    except NiftiError as e:
        raise type(e)(f"{path}: {e}") from e


def _emit(df: DetectionFile, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(dumps(df))
    else:
        saved = save_detection_file(df, out)
        print(f"Wrote {saved}")


def _pick(flag, configured):
    return configured if flag is None else flag


def gt_extract_command(cfg: PipelineConfig, masks: Sequence[str], connectivity: Optional[int],
                       min_voxels: Optional[int], out: Optional[str]) -> None:
    """Ground-truth boxes and centres from one or more lesion masks."""
    conn = _pick(connectivity, cfg.connectivity)
    keep = _pick(min_voxels, cfg.min_voxels)
    paths = expand_inputs(list(masks))
    if not paths:
        raise FileNotFoundError("no mask files found")

    def extract(path: Path) -> ScanEntry:
        mask = _load(path)
        instances = connected_components(mask, conn, keep)
        log.info("%s: %d lesions", path, len(instances))
        return ScanEntry(scan_id_from_path(path), truth=truth_from_instances(instances), spacing=mask.spacing)

    # map keeps input order
    with ThreadPoolExecutor(max_workers=thread_count()) as executor:
        entries = list(executor.map(extract, paths))
    ids = [e.id for e in entries]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise DetectionFileError(f"duplicate scan id(s) from input file names: {', '.join(dupes)}")
    _emit(DetectionFile(tuple(entries)), out)


def preprocess_command(cfg: PipelineConfig, image_path: str, out: str,
                       spacing: Optional[Tuple[float, float, float]], mode: Optional[str]) -> None:
    """Crop, normalise and resample a volume; print the crop offset."""
    vol = _load(Path(image_path))
    target = _pick(spacing, cfg.target_spacing) or vol.spacing
    result, offset = preprocess_volume(vol, target, _pick(mode, cfg.mode))
    save_volume(result, out)
    print(f"{offset[0]} {offset[1]} {offset[2]}")


def detect_baseline_command(cfg: PipelineConfig, image_path: str, threshold: Optional[float],
                            min_voxels: Optional[int], nms_iou: Optional[float],
                            scan_id: Optional[str], out: Optional[str]) -> None:
    """Threshold-and-components detector followed by NMS."""
    vol = _load(Path(image_path))
    raw = baseline_detect(vol, _pick(threshold, cfg.threshold), _pick(min_voxels, cfg.min_voxels))
    kept = nms(raw, _pick(nms_iou, cfg.nms_iou))
    log.info("%s: %d detections (%d before NMS)", image_path, len(kept), len(raw))
    entry = ScanEntry(scan_id or scan_id_from_path(image_path), detections=tuple(kept), spacing=vol.spacing)
    _emit(DetectionFile((entry,)), out)


def _eval_inputs(detections_path: str, truth_path: Optional[str]):
    detections = load_detection_file(detections_path)
    truth = load_detection_file(truth_path) if truth_path else None
    return scan_results(detections, truth)


def eval_command(cfg: PipelineConfig, detections_path: str, truth_path: Optional[str],
                 iou_threshold: Optional[float], fpps: Optional[Tuple[float, ...]], out_dir: Optional[str]) -> None:
    """FROC evaluation: table on stdout, CSV and SVG files when an output directory is given."""
    scans = _eval_inputs(detections_path, truth_path)
    report = froc_report(scans, _pick(iou_threshold, cfg.iou_threshold), _pick(fpps, cfg.fpps))
    print("fpps, sensitivity")
    for q, s in report.table_rows():
        print(f"{q}, {s:.4f}")
    print(f"mean sensitivity: {report.mean_sensitivity:.4f}")
    if out_dir is not None:
        target = Path(out_dir)
        write_text_atomic(target / "froc.csv", report.curve_csv)
        if report.table_csv is not None:
            write_text_atomic(target / "froc_points.csv", report.table_csv)
        write_text_atomic(target / "froc.svg", report.svg)
        log.info("wrote FROC outputs to %s", target)


def centers_command(cfg: PipelineConfig, detections_path: str, truth_path: Optional[str],
                    iou_threshold: Optional[float], out: Optional[str]) -> None:
    """Predicted against true lesion centres, one row per ground-truth lesion."""
    scans = _eval_inputs(detections_path, truth_path)
    text = center_table_csv(center_table(scans, _pick(iou_threshold, cfg.iou_threshold)))
    if out is None:
        sys.stdout.write(text)
    else:
        print(f"Wrote {write_text_atomic(out, text)}")


def phantom_command(cfg: PipelineConfig, out_dir: str, overrides: dict, scan_id: str) -> None:
    """Write image.nii, mask.nii and truth.json for one synthetic phantom."""
    spec = replace(cfg.phantom, **{k: v for k, v in overrides.items() if v is not None})
    phantom = generate(spec)
    target = Path(out_dir)
    save_volume(phantom.image, target / "image.nii")
    save_volume(phantom.mask, target / "mask.nii")
    truth = DetectionFile((ScanEntry(scan_id, truth=truth_from_instances(phantom.truth), spacing=spec.spacing),))
    save_detection_file(truth, target / "truth.json")
    print(f"Phantom written to: {target} ({len(phantom.truth)} lesions)")


def overlay_command(image_path: str, detections_path: str, out: str, scan_id: Optional[str],
                    slice_index: Optional[int], scale: int) -> None:
    """PNG of one axial slice with detection (red) and truth (green) boxes."""
    vol = _load(Path(image_path))
    df = load_detection_file(detections_path)
    wanted = scan_id or scan_id_from_path(image_path)
    entry = df.scan(wanted)
    if entry is None:
        raise ConsistencyError(f"scan id {wanted!r} not found in {detections_path}")
    dets = list(entry.detections or ())
    truths = [(t.box, t.center) for t in entry.truth or ()]
    z = slice_index if slice_index is not None else best_slice(dets, truths, vol.dims[2])
    save_png(render_slice(vol, z, dets, truths, scale), out)
    print(f"Overlay saved to: {out} (slice {z})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Lesion detection toolkit: ground truth, preprocessing, baseline detection and FROC evaluation")
    parser.add_argument("--config", help="TOML or YAML file with pipeline settings")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    gt_parser = subparsers.add_parser("gt-extract", help="Extract ground-truth lesions from masks")
    gt_parser.add_argument("masks", nargs="+", help="Mask NIfTI files or directories of them")
    gt_parser.add_argument("--connectivity", type=int, choices=(6, 26), help="Voxel adjacency (default 26)")
    gt_parser.add_argument("--min-voxels", type=int, help="Drop smaller components (default 1)")
    gt_parser.add_argument("--out", help="Output JSON (default: stdout)")

    pre_parser = subparsers.add_parser("preprocess", help="Crop, z-score and resample a volume")
    pre_parser.add_argument("image", help="Input NIfTI")
    pre_parser.add_argument("--out", required=True, help="Output NIfTI (.nii or .nii.gz)")
    pre_parser.add_argument("--spacing", type=_number_list(float, 3), help="Target spacing sx,sy,sz in mm (default: keep)")
    pre_parser.add_argument("--mode", choices=RESAMPLE_MODES, help="Interpolation (default trilinear)")

    det_parser = subparsers.add_parser("detect-baseline", help="Threshold-and-components detector")
    det_parser.add_argument("image", help="Input NIfTI")
    det_parser.add_argument("--threshold", type=float, help="Intensity threshold (default 150)")
    det_parser.add_argument("--min-voxels", type=int, help="Drop smaller components (default 1)")
    det_parser.add_argument("--nms-iou", type=float, help="NMS IoU threshold (default 0.5)")
    det_parser.add_argument("--scan-id", help="Scan id (default: image file name)")
    det_parser.add_argument("--out", help="Output JSON (default: stdout)")

    eval_parser = subparsers.add_parser("eval", help="FROC evaluation")
    eval_parser.add_argument("detections", help="Detection JSON (may also hold truth)")
    eval_parser.add_argument("--truth", help="Separate truth JSON")
    eval_parser.add_argument("--iou-threshold", type=float, help="Match IoU threshold (default 0.3)")
    eval_parser.add_argument("--fpps", type=_number_list(float), help="Operating points (default 0.25,0.5,1,2)")
    eval_parser.add_argument("--out-dir", help="Directory for froc.csv, froc_points.csv and froc.svg")

    ctr_parser = subparsers.add_parser("centers", help="Predicted vs true lesion centres")
    ctr_parser.add_argument("detections", help="Detection JSON (may also hold truth)")
    ctr_parser.add_argument("--truth", help="Separate truth JSON")
    ctr_parser.add_argument("--iou-threshold", type=float, help="Match IoU threshold (default 0.3)")
    ctr_parser.add_argument("--out", help="Output CSV (default: stdout)")

    ph_parser = subparsers.add_parser("phantom", help="Generate a synthetic phantom")
    ph_parser.add_argument("--out-dir", required=True, help="Directory for image.nii, mask.nii, truth.json")
    ph_parser.add_argument("--seed", type=int, help="Random seed")
    ph_parser.add_argument("--dims", type=_number_list(int, 3), help="Voxel counts nx,ny,nz")
    ph_parser.add_argument("--spacing", type=_number_list(float, 3), help="Voxel size sx,sy,sz in mm")
    ph_parser.add_argument("--lesions", type=int, help="Number of lesions")
    ph_parser.add_argument("--radius-range", type=_number_list(float, 2), help="Lesion radius min,max in mm")
    ph_parser.add_argument("--vessels", type=int, help="Number of vessels")
    ph_parser.add_argument("--noise", type=float, help="Gaussian noise sigma")
    ph_parser.add_argument("--scan-id", default="image", help="Scan id in truth.json (default: image)")

    ov_parser = subparsers.add_parser("overlay", help="Render a slice with boxes as PNG")
    ov_parser.add_argument("image", help="Input NIfTI")
    ov_parser.add_argument("detections", help="Detection JSON")
    ov_parser.add_argument("--out", required=True, help="Output PNG")
    ov_parser.add_argument("--scan-id", help="Scan id (default: image file name)")
    ov_parser.add_argument("--slice", type=int, dest="slice_index", help="Axial slice (default: top detection)")
    ov_parser.add_argument("--scale", type=int, default=4, help="Pixel magnification (default 4)")
    return parser


def run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    cfg = load_config(args.config)
    if args.command == "gt-extract":
        gt_extract_command(cfg, args.masks, args.connectivity, args.min_voxels, args.out)
    elif args.command == "preprocess":
        preprocess_command(cfg, args.image, args.out, args.spacing, args.mode)
    elif args.command == "detect-baseline":
        detect_baseline_command(cfg, args.image, args.threshold, args.min_voxels, args.nms_iou, args.scan_id, args.out)
    elif args.command == "eval":
        eval_command(cfg, args.detections, args.truth, args.iou_threshold, args.fpps, args.out_dir)
    elif args.command == "centers":
        centers_command(cfg, args.detections, args.truth, args.iou_threshold, args.out)
    elif args.command == "phantom":
        overrides = {
            "seed": args.seed,
            "dims": args.dims,
            "spacing": args.spacing,
            "n_lesions": args.lesions,
            "lesion_radius_range": args.radius_range,
            "vessel_count": args.vessels,
            "noise_sigma": args.noise,
        }
        phantom_command(cfg, args.out_dir, overrides, args.scan_id)
    elif args.command == "overlay":
        overlay_command(args.image, args.detections, args.out, args.scan_id, args.slice_index, args.scale)
    else:
        parser.print_help()
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=log_level(args.verbose),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args, parser)
    except ConsistencyError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except (LesionboxError, OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
