"""
Lesion-level evaluation: greedy IoU matching of detections to ground truth,
FROC curves (sensitivity versus false positives per scan) and report output.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lesionbox.geometry import Box3, Detection, iou
from lesionbox.labels import compare_centers


log = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.3
DEFAULT_OPERATING_POINTS = (0.25, 0.5, 1.0, 2.0)

FP = -1


@dataclass(frozen=True)
class ScanResult:
    scan_id: str
    gts: Tuple[Box3, ...] = ()
    detections: Tuple[Detection, ...] = ()
    gt_centers: Tuple[Optional[Tuple[float, float, float]], ...] = ()
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "gts", tuple(self.gts))
        object.__setattr__(self, "detections", tuple(self.detections))
        object.__setattr__(self, "gt_centers", tuple(self.gt_centers))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))


@dataclass(frozen=True)
class ScanMatch:
    """`labels[i]` is the gt index matched by detection i, or FP (-1)."""

    labels: Tuple[int, ...]
    gt_hit: Tuple[bool, ...]
    order: Tuple[int, ...]

    @property
    def true_positives(self) -> int:
        return sum(1 for lab in self.labels if lab != FP)

    @property
    def false_positives(self) -> int:
        return sum(1 for lab in self.labels if lab == FP)


@dataclass(frozen=True)
class FrocCurve:
    points: Tuple[Tuple[float, float], ...]
    num_scans: int
    num_gts: int

    @property
    def fpps(self) -> List[float]:
        return [p[0] for p in self.points]

    @property
    def sensitivity(self) -> List[float]:
        return [p[1] for p in self.points]


def score_order(detections: Sequence[Detection]) -> List[int]:
    """Indices by descending score, input order on ties."""
    return sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))


def match_scan(scan: ScanResult, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> ScanMatch:
    """
    Greedy matching in descending score order.

    A detection is a true positive when some unmatched gt has IoU >=
    `iou_threshold` with it; it takes the highest-IoU such gt (lowest index
    on ties). Every gt is matched at most once.
    """
    labels = [FP] * len(scan.detections)
    hit = [False] * len(scan.gts)
    order = score_order(scan.detections)
    for i in order:
        box = scan.detections[i].box
        best, best_iou = FP, -1.0
        for j, gt in enumerate(scan.gts):
            if hit[j]:
                continue
            overlap = iou(box, gt)
            if overlap >= iou_threshold and overlap > best_iou:
                best, best_iou = j, overlap
        if best != FP:
            labels[i] = best
            hit[best] = True
    return ScanMatch(tuple(labels), tuple(hit), tuple(order))


def froc_curve(scans: Sequence[ScanResult], iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> FrocCurve:
    """
    Sweep the score threshold over every distinct detection score.

    At threshold s the detections with score >= s are matched per scan and
    the point (total FP / scans, total TP / gts) recorded. Because greedy
    matching runs in score order, the matching at s is a prefix of the full
    per-scan matching, so one matching per scan gives every point.
    `(0, 0)` is prepended unless already present.
    """
    if not scans:
        raise ValueError("froc_curve needs at least one scan")
    num_scans = len(scans)
    num_gts = sum(len(s.gts) for s in scans)

    scores: List[float] = []
    is_tp: List[bool] = []
    for scan in scans:
        match = match_scan(scan, iou_threshold)
        log.debug("scan %s: %d true, %d false positives", scan.scan_id, match.true_positives, match.false_positives)
        for i, det in enumerate(scan.detections):
            scores.append(det.score)
            is_tp.append(match.labels[i] != FP)

    points: List[Tuple[float, float]] = []
    if scores:
        score_arr = np.asarray(scores)
        tp_arr = np.asarray(is_tp, dtype=np.int64)
        order = np.argsort(-score_arr, kind="stable")
        sorted_scores = score_arr[order]
        tp_cum = np.cumsum(tp_arr[order])
        fp_cum = np.cumsum(1 - tp_arr[order])
        # last position of each run of equal scores
        cut = np.flatnonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))
        for k in cut:
            fp, tp = int(fp_cum[k]), int(tp_cum[k])
            sens = tp / num_gts if num_gts else 0.0
            points.append((fp / num_scans, sens))

    if (0.0, 0.0) not in points:
        points.insert(0, (0.0, 0.0))
    log.debug("froc curve: %d points over %d scans, %d lesions", len(points), num_scans, num_gts)
    return FrocCurve(tuple(points), num_scans, num_gts)


def sensitivity_at(curve: FrocCurve, fpps_query: float) -> float:
    """Best sensitivity among points with fpps <= query (staircase); 0 if none."""
    best = 0.0
    for fpps, sens in curve.points:
        if fpps <= fpps_query and sens > best:
            best = sens
    return best


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _csv_text(rows: Sequence[Tuple[float, float]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["fpps", "sensitivity"])
    for fpps, sens in rows:
        writer.writerow([_fmt(fpps), _fmt(sens)])
    return buffer.getvalue()


def render_svg(curve: FrocCurve, operating_points: Sequence[float] = (), width: int = 480, height: int = 360) -> str:
    """Single-polyline FROC plot with axes labelled FPPS and Sensitivity."""
    left, right, top, bottom = 60, 20, 20, 50
    plot_w = width - left - right
    plot_h = height - top - bottom
    x_max = max([p[0] for p in curve.points] + list(operating_points) + [1.0])

    def sx(v: float) -> float:
        return left + plot_w * v / x_max

    def sy(v: float) -> float:
        return top + plot_h * (1.0 - v)

    # staircase: horizontal then vertical
    path: List[str] = []
    prev: Optional[Tuple[float, float]] = None
    for fpps, sens in curve.points:
        if prev is not None and fpps != prev[0]:
            path.append(f"{sx(fpps):.2f},{sy(prev[1]):.2f}")
        path.append(f"{sx(fpps):.2f},{sy(sens):.2f}")
        prev = (fpps, sens)
    if prev is not None and prev[0] < x_max:
        path.append(f"{sx(x_max):.2f},{sy(prev[1]):.2f}")

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for i in range(5):
        v = i / 4
        lines.append(f'<text x="{left - 8}" y="{sy(v) + 4:.2f}" font-size="11" text-anchor="end">{v:.2f}</text>')
        xv = x_max * v
        lines.append(f'<text x="{sx(xv):.2f}" y="{top + plot_h + 16}" font-size="11" text-anchor="middle">{xv:.2f}</text>')
    for q in operating_points:
        lines.append(
            f'<line x1="{sx(q):.2f}" y1="{top}" x2="{sx(q):.2f}" y2="{top + plot_h}" stroke="#bbbbbb" stroke-dasharray="4,3"/>'
        )
    lines.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{" ".join(path)}"/>')
    lines.append(f'<text x="{left + plot_w / 2:.2f}" y="{height - 10}" font-size="13" text-anchor="middle">FPPS</text>')
    lines.append(
        f'<text x="16" y="{top + plot_h / 2:.2f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + plot_h / 2:.2f})">Sensitivity</text>'
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class FrocReport:
    curve: FrocCurve
    operating_points: Tuple[float, ...]
    sensitivities: Tuple[float, ...]
    curve_csv: str
    table_csv: Optional[str]
    svg: str

    @property
    def mean_sensitivity(self) -> float:
        if not self.sensitivities:
            return 0.0
        return math.fsum(self.sensitivities) / len(self.sensitivities)

    def table_rows(self) -> List[Tuple[float, float]]:
        return list(zip(self.operating_points, self.sensitivities))


def froc_report(
    scans: Sequence[ScanResult],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    operating_points: Sequence[float] = DEFAULT_OPERATING_POINTS,
) -> FrocReport:
    """
    Evaluate scans and serialise the result.

    Returns:
        FrocReport with the curve CSV, the operating-point table CSV (None
        when there are no operating points) and an SVG plot.
    """
    curve = froc_curve(scans, iou_threshold)
    points = tuple(float(q) for q in operating_points)
    sens = tuple(sensitivity_at(curve, q) for q in points)
    table = _csv_text(list(zip(points, sens))) if points else None
    return FrocReport(
        curve=curve,
        operating_points=points,
        sensitivities=sens,
        curve_csv=_csv_text(curve.points),
        table_csv=table,
        svg=render_svg(curve, points),
    )


@dataclass(frozen=True)
class CenterRow:
    scan_id: str
    truth_index: int
    truth_center: Tuple[float, float, float]
    predicted_center: Optional[Tuple[float, float, float]]
    distance_mm: Optional[float]


def center_table(scans: Sequence[ScanResult], iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> List[CenterRow]:
    """
    Per ground-truth lesion: the centre of the detection matched to it (if
    any) against the true centre, with the distance in mm.

    True centres come from `gt_centers` when given, else the gt box centre.
    """
    rows: List[CenterRow] = []
    for scan in scans:
        match = match_scan(scan, iou_threshold)
        by_gt: Dict[int, Detection] = {
            lab: scan.detections[i] for i, lab in enumerate(match.labels) if lab != FP
        }
        for j, gt in enumerate(scan.gts):
            truth = scan.gt_centers[j] if j < len(scan.gt_centers) and scan.gt_centers[j] is not None else gt.voxel_center()
            det = by_gt.get(j)
            if det is None:
                rows.append(CenterRow(scan.scan_id, j, tuple(truth), None, None))  # type: ignore[arg-type]
                continue
            pred = det.estimated_center()
            rows.append(CenterRow(scan.scan_id, j, tuple(truth), pred, compare_centers(pred, truth, scan.spacing)))  # type: ignore[arg-type]
    return rows


def center_table_csv(rows: Sequence[CenterRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["scan_id", "truth_index", "truth_x", "truth_y", "truth_z", "pred_x", "pred_y", "pred_z", "distance_mm"])
    for row in rows:
        pred = [_fmt(v) for v in row.predicted_center] if row.predicted_center is not None else ["", "", ""]
        dist = _fmt(row.distance_mm) if row.distance_mm is not None else ""
        writer.writerow([row.scan_id, row.truth_index, *(_fmt(v) for v in row.truth_center), *pred, dist])
    return buffer.getvalue()
