import numpy as np
import pytest

from lesionbox.geometry import (
    Box3,
    Detection,
    as_box_array,
    box_from_voxels,
    enclosing,
    giou,
    iou,
    iou_matrix,
    nms,
    volume,
)


def _box(lo, hi) -> Box3:
    return Box3(tuple(map(float, lo)), tuple(map(float, hi)))


def _random_box(rng, low=0.0, high=10.0) -> Box3:
    a = rng.uniform(low, high, size=3)
    b = rng.uniform(low, high, size=3)
    return _box(np.minimum(a, b), np.maximum(a, b))


def test_box_invariants():
    with pytest.raises(ValueError):
        _box((1, 0, 0), (0, 1, 1))
    with pytest.raises(ValueError):
        _box((0, 0, float("nan")), (1, 1, 1))
    with pytest.raises(ValueError):
        Detection(_box((0, 0, 0), (1, 1, 1)), 1.5)
    vox = box_from_voxels((2, 3, 4), (2, 5, 4))
    assert vox.min == (2.0, 3.0, 4.0) and vox.max == (3.0, 6.0, 5.0)
    assert vox.voxel_center() == (2.0, 4.0, 4.0)


def test_volume_examples():
    assert volume(_box((0, 0, 0), (1, 1, 1))) == 1.0
    assert volume(_box((1, 2, 3), (1, 2, 3))) == 0.0
    assert volume(_box((0, 0, 0), (2, 3, 4))) == 24.0


def test_iou_examples():
    a = _box((0, 0, 0), (2, 2, 2))
    b = _box((1, 1, 1), (3, 3, 3))
    assert iou(a, a) == 1.0
    assert iou(a, _box((5, 5, 5), (6, 6, 6))) == 0.0
    assert iou(a, b) == pytest.approx(1.0 / 15.0, abs=1e-15)
    point = _box((1, 1, 1), (1, 1, 1))
    assert iou(point, point) == 0.0


def test_giou_examples():
    a = _box((0, 0, 0), (2, 2, 2))
    b = _box((1, 1, 1), (3, 3, 3))
    assert giou(a, a) == 1.0
    assert giou(_box((0, 0, 0), (1, 1, 1)), _box((2, 0, 0), (3, 1, 1))) == pytest.approx(-1.0 / 3.0, abs=1e-15)
    assert giou(a, b) == pytest.approx(1.0 / 15.0 - 4.0 / 9.0, abs=1e-15)
    point = _box((1, 1, 1), (1, 1, 1))
    assert giou(point, point) == 0.0
    assert enclosing(a, b) == _box((0, 0, 0), (3, 3, 3))


def test_symmetry_bounds_and_invariance():
    rng = np.random.default_rng(21)
    for _ in range(500):
        a, b = _random_box(rng), _random_box(rng)
        assert iou(a, b) == iou(b, a)
        assert giou(a, b) == giou(b, a)
        assert giou(a, b) <= iou(a, b)
        assert 0.0 <= iou(a, b) <= 1.0
        assert -1.0 <= giou(a, b) <= 1.0

        t = rng.uniform(-5.0, 5.0, size=3)
        s = float(rng.uniform(0.5, 3.0))
        moved = [_box(np.add(x.min, t), np.add(x.max, t)) for x in (a, b)]
        scaled = [_box(np.multiply(x.min, s), np.multiply(x.max, s)) for x in (a, b)]
        assert iou(*moved) == pytest.approx(iou(a, b), abs=1e-9)
        assert giou(*moved) == pytest.approx(giou(a, b), abs=1e-9)
        assert iou(*scaled) == pytest.approx(iou(a, b), abs=1e-9)
        assert giou(*scaled) == pytest.approx(giou(a, b), abs=1e-9)


def test_iou_matches_monte_carlo():
    rng = np.random.default_rng(1)
    samples = rng.random((3, 1_000_000))
    for k in range(500):
        a = _random_box(rng)
        if k % 2 == 0:
            b = _random_box(rng)
        else:
            shift = rng.uniform(-1.5, 1.5, size=3)
            b = _box(np.add(a.min, shift), np.add(a.max, shift) + rng.uniform(0.0, 1.0, size=3))
        hull = enclosing(a, b)
        lo, ext = np.array(hull.min), np.array(hull.extent)
        if np.any(ext <= 0):
            continue
        in_a = np.ones(samples.shape[1], dtype=bool)
        in_b = np.ones(samples.shape[1], dtype=bool)
        for axis in range(3):
            # box bounds in the unit coordinates of the hull
            u = samples[axis]
            in_a &= (u >= (a.min[axis] - lo[axis]) / ext[axis]) & (u <= (a.max[axis] - lo[axis]) / ext[axis])
            in_b &= (u >= (b.min[axis] - lo[axis]) / ext[axis]) & (u <= (b.max[axis] - lo[axis]) / ext[axis])
        both = int(np.count_nonzero(in_a & in_b))
        either = int(np.count_nonzero(in_a | in_b))
        estimate = both / either if either else 0.0
        assert abs(iou(a, b) - estimate) <= 5e-3, f"pair {k}: {a}, {b}"


def test_iou_matrix_agrees_with_scalar():
    rng = np.random.default_rng(4)
    boxes_a = [_random_box(rng) for _ in range(12)]
    boxes_b = [_random_box(rng) for _ in range(7)] + [_box((1, 1, 1), (1, 1, 1))]
    m = iou_matrix(boxes_a, boxes_b)
    assert m.shape == (12, 8)
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            assert m[i, j] == pytest.approx(iou(a, b), abs=1e-12)
    assert as_box_array([]).shape == (0, 6)


def test_nms_examples():
    box = _box((0, 0, 0), (2, 2, 2))
    kept = nms([Detection(box, 0.8), Detection(box, 0.9)], 0.5)
    assert [d.score for d in kept] == [0.9]

    far = _box((10, 10, 10), (11, 11, 11))
    kept = nms([Detection(box, 0.3), Detection(far, 0.6)], 0.5)
    assert [d.score for d in kept] == [0.6, 0.3]

    # chain: A-B 0.6, B-C 0.4, A-C 0; B goes with A, so C survives
    a = _box((0, 0, 0), (6, 1, 1))
    b = _box((0, 0, 0), (10, 1, 1))
    c = _box((6, 0, 0), (10, 1, 1))
    assert iou(a, b) == pytest.approx(0.6)
    assert iou(b, c) == pytest.approx(0.4)
    assert iou(a, c) == 0.0
    chain = [Detection(a, 0.9), Detection(b, 0.8), Detection(c, 0.7)]
    assert [d.score for d in nms(chain, 0.5)] == [0.9, 0.7]
    assert [d.score for d in nms(chain, 0.3)] == [0.9, 0.7]


def test_nms_properties():
    rng = np.random.default_rng(6)
    for _ in range(50):
        dets = [Detection(_random_box(rng), float(rng.random())) for _ in range(int(rng.integers(0, 15)))]
        kept = nms(dets, 0.3)
        scores = [d.score for d in kept]
        assert scores == sorted(scores, reverse=True)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou(kept[i].box, kept[j].box) <= 0.3
        assert len(nms(dets, 1.0)) == len(dets)
    tie = _box((0, 0, 0), (1, 1, 1))
    first, second = Detection(tie, 0.5, (0.0, 0.0, 0.0)), Detection(tie, 0.5, (1.0, 1.0, 1.0))
    assert nms([first, second], 0.5) == [first]


def main() -> None:
    test_box_invariants()
    test_volume_examples()
    test_iou_examples()
    test_giou_examples()
    test_symmetry_bounds_and_invariance()
    test_iou_matches_monte_carlo()
    test_iou_matrix_agrees_with_scalar()
    test_nms_examples()
    test_nms_properties()
    print("Geometry test: OK")


if __name__ == "__main__":
    main()
