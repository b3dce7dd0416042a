import numpy as np
import pytest

from lesionbox.froc import (
    FP,
    ScanResult,
    center_table,
    center_table_csv,
    froc_curve,
    froc_report,
    match_scan,
    sensitivity_at,
)
from lesionbox.geometry import Box3, Detection, iou


def _box(lo, hi) -> Box3:
    return Box3(tuple(map(float, lo)), tuple(map(float, hi)))


def _cube(x: float, size: float = 2.0) -> Box3:
    return _box((x, 0, 0), (x + size, size, size))


def _two_scan_dataset():
    a, b, c = _cube(0), _cube(10), _cube(0)
    s1 = ScanResult("s1", gts=[a, b], detections=[
        Detection(a, 0.9),
        Detection(_cube(40), 0.8),
        Detection(b, 0.6),
    ])
    s2 = ScanResult("s2", gts=[c], detections=[Detection(_cube(40), 0.7)])
    return [s1, s2]


def test_match_scan_examples():
    gt = _cube(0)
    lonely = ScanResult("x", detections=[Detection(_cube(5), 0.5), Detection(_cube(9), 0.4)])
    assert match_scan(lonely).labels == (FP, FP)
    assert match_scan(lonely).false_positives == 2

    twice = ScanResult("x", gts=[gt], detections=[Detection(gt, 0.8), Detection(gt, 0.9)])
    match = match_scan(twice)
    assert match.labels == (FP, 0)
    assert match.gt_hit == (True,)
    assert match.order == (1, 0)
    assert (match.true_positives, match.false_positives) == (1, 1)

    # IoU exactly at the threshold counts
    long_gt = _box((0, 0, 0), (10, 1, 1))
    edge = ScanResult("x", gts=[long_gt], detections=[Detection(_box((0, 0, 0), (3, 1, 1)), 0.5)])
    assert iou(edge.detections[0].box, long_gt) == 0.3
    assert match_scan(edge, 0.3).labels == (0,)

    # the highest-IoU free gt wins
    near, far = _box((0, 0, 0), (4, 4, 4)), _box((1, 0, 0), (5, 4, 4))
    best = ScanResult("x", gts=[far, near], detections=[Detection(_box((0, 0, 0), (4, 4, 4)), 0.5)])
    assert match_scan(best).labels == (1,)


def test_two_scan_curve():
    curve = froc_curve(_two_scan_dataset(), 0.3)
    third = 1.0 / 3.0
    assert curve.points == ((0.0, 0.0), (0.0, third), (0.5, third), (1.0, third), (1.0, 2.0 / 3.0))
    assert curve.num_scans == 2 and curve.num_gts == 3
    assert sensitivity_at(curve, 1.0) == pytest.approx(2.0 / 3.0)
    assert sensitivity_at(curve, 0.75) == pytest.approx(third)
    assert sensitivity_at(curve, 0.0) == pytest.approx(third)


def test_trivial_curves():
    gt = _cube(0)
    perfect = froc_curve([ScanResult("a", gts=[gt], detections=[Detection(gt, 0.9)])])
    assert perfect.points[-1] == (0.0, 1.0)
    empty = froc_curve([ScanResult("a", gts=[gt]), ScanResult("b")])
    assert empty.points == ((0.0, 0.0),)
    no_gts = froc_curve([ScanResult("a", detections=[Detection(gt, 0.5)])])
    assert all(sens == 0.0 for _, sens in no_gts.points)
    with pytest.raises(ValueError):
        froc_curve([])


def _greedy(gts, dets, threshold):
    hit = [False] * len(gts)
    tp = 0
    for det in sorted(dets, key=lambda d: -d.score):
        choice, best = None, -1.0
        for j, gt in enumerate(gts):
            overlap = iou(det.box, gt)
            if not hit[j] and overlap >= threshold and overlap > best:
                choice, best = j, overlap
        if choice is not None:
            hit[choice] = True
            tp += 1
    return tp, len(dets) - tp


def _oracle(scans, threshold):
    num_gts = sum(len(s.gts) for s in scans)
    cuts = sorted({d.score for s in scans for d in s.detections}, reverse=True)
    points = []
    for cut in cuts:
        tp = fp = 0
        for s in scans:
            t, f = _greedy(s.gts, [d for d in s.detections if d.score >= cut], threshold)
            tp, fp = tp + t, fp + f
        points.append((fp / len(scans), tp / num_gts if num_gts else 0.0))
    if (0.0, 0.0) not in points:
        points.insert(0, (0.0, 0.0))
    return tuple(points)


def _random_dataset(rng):
    scans = []
    for k in range(int(rng.integers(1, 6))):
        gts, dets = [], []
        for _ in range(int(rng.integers(0, 5))):
            lo = rng.uniform(0.0, 8.0, size=3)
            gts.append(_box(lo, lo + rng.uniform(1.0, 4.0, size=3)))
        for _ in range(int(rng.integers(0, 7))):
            lo = rng.uniform(0.0, 8.0, size=3)
            # coarse scores so ties happen
            score = float(rng.integers(1, 10)) / 10.0
            dets.append(Detection(_box(lo, lo + rng.uniform(1.0, 4.0, size=3)), score))
        scans.append(ScanResult(f"scan{k}", gts=gts, detections=dets))
    return scans


def test_matches_score_cut_oracle():
    rng = np.random.default_rng(77)
    for trial in range(100):
        scans = _random_dataset(rng)
        assert froc_curve(scans, 0.3).points == _oracle(scans, 0.3), f"dataset {trial}"


def test_curve_properties():
    rng = np.random.default_rng(78)
    queries = [0.0, 0.2, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 5.0]
    for _ in range(50):
        scans = _random_dataset(rng)
        curve = froc_curve(scans)
        sens = [sensitivity_at(curve, q) for q in queries]
        assert sens == sorted(sens)
        fpps = curve.fpps
        assert fpps == sorted(fpps)
        assert curve.sensitivity == sorted(curve.sensitivity)
        for x in fpps:
            assert x * curve.num_scans == pytest.approx(round(x * curve.num_scans))

        # a detection far from every gt
        extra = Detection(_box((100, 100, 100), (102, 102, 102)), float(rng.integers(1, 10)) / 10.0)
        first = scans[0]
        padded = [ScanResult(first.scan_id, first.gts, first.detections + (extra,))] + scans[1:]
        worse = froc_curve(padded)
        for q, before in zip(queries, sens):
            assert sensitivity_at(worse, q) <= before
        assert max(worse.fpps) >= max(fpps)

        squared = [
            ScanResult(s.scan_id, s.gts, [Detection(d.box, d.score ** 2) for d in s.detections])
            for s in scans
        ]
        assert froc_curve(squared).points == curve.points


def test_report():
    scans = _two_scan_dataset()
    report = froc_report(scans, 0.3, (0.25, 0.5, 1.0, 2.0))
    assert len(report.table_rows()) == 4
    for q, s in report.table_rows():
        assert s == sensitivity_at(report.curve, q)
    assert report.table_csv == (
        "fpps,sensitivity\n"
        "0.250000,0.333333\n"
        "0.500000,0.333333\n"
        "1.000000,0.666667\n"
        "2.000000,0.666667\n"
    )
    assert report.curve_csv.splitlines()[0] == "fpps,sensitivity"
    assert len(report.curve_csv.splitlines()) == 1 + len(report.curve.points)
    assert report.mean_sensitivity == pytest.approx(0.5)
    assert "<polyline" in report.svg and ">FPPS<" in report.svg and ">Sensitivity<" in report.svg

    again = froc_report(_two_scan_dataset(), 0.3, (0.25, 0.5, 1.0, 2.0))
    assert again.curve_csv == report.curve_csv
    assert again.svg == report.svg

    bare = froc_report(scans, 0.3, ())
    assert bare.table_csv is None
    assert bare.curve_csv == report.curve_csv


def test_center_table():
    gt = _box((2, 2, 2), (6, 6, 6))
    scan = ScanResult(
        "s",
        gts=[gt, _cube(40)],
        detections=[Detection(gt, 0.9, (4.5, 3.5, 3.5))],
        gt_centers=[(3.5, 3.5, 3.5), None],
        spacing=(0.5, 1.0, 1.0),
    )
    first, second = center_table([scan])
    assert first.truth_center == (3.5, 3.5, 3.5)
    assert first.predicted_center == (4.5, 3.5, 3.5)
    assert first.distance_mm == pytest.approx(0.5)
    assert second.predicted_center is None and second.distance_mm is None
    assert second.truth_center == (40.5, 0.5, 0.5)

    text = center_table_csv([first, second]).splitlines()
    assert text[0].startswith("scan_id,truth_index")
    assert text[1] == "s,0,3.500000,3.500000,3.500000,4.500000,3.500000,3.500000,0.500000"
    assert text[2].endswith(",,,,")


def main() -> None:
    test_match_scan_examples()
    test_two_scan_curve()
    test_trivial_curves()
    test_matches_score_cut_oracle()
    test_curve_properties()
    test_report()
    test_center_table()
    print("FROC test: OK")


if __name__ == "__main__":
    main()
