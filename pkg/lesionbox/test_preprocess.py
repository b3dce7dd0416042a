import math
import warnings

import numpy as np
import pytest

from lesionbox.errors import VolumeError
from lesionbox.preprocess import crop_nonzero, preprocess_volume, resample, zscore
from lesionbox.volume import Volume3


def _vol(data, spacing=(1.0, 1.0, 1.0), affine=None) -> Volume3:
    return Volume3(np.asarray(data, dtype=np.float64), spacing, affine)


def test_volume_invariants():
    with pytest.raises(VolumeError):
        _vol(np.zeros((2, 2)))
    with pytest.raises(VolumeError):
        _vol(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))
    bad = np.eye(4)
    bad[3, 0] = 1.0
    with pytest.raises(VolumeError):
        _vol(np.zeros((2, 2, 2)), affine=bad)
    vol = Volume3.from_flat(range(8), (2, 2, 2), (1.0, 2.0, 3.0))
    assert vol.data[1, 0, 0] == 1.0 and vol.data[0, 0, 1] == 4.0
    assert vol.voxel_volume == 6.0
    assert vol.voxel_to_world((1, 1, 1)).tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 5.0


def test_crop_single_voxel():
    data = np.zeros((4, 4, 4))
    data[2, 1, 3] = 5.0
    crop = crop_nonzero(_vol(data, spacing=(0.5, 0.5, 2.0)))
    assert crop.volume.dims == (1, 1, 1)
    assert crop.offset == (2, 1, 3)
    # voxel keeps its world position
    assert crop.volume.voxel_to_world((0, 0, 0)).tolist() == [1.0, 0.5, 6.0]


def test_crop_corner_pair_and_all_zero():
    data = np.zeros((5, 5, 5))
    data[0, 0, 0] = 1.0
    data[3, 2, 1] = -2.0
    crop = crop_nonzero(_vol(data))
    assert crop.volume.dims == (4, 3, 2)
    assert crop.offset == (0, 0, 0)

    empty = _vol(np.zeros((3, 2, 4)))
    crop = crop_nonzero(empty)
    assert crop.volume is empty
    assert crop.offset == (0, 0, 0)


def test_crop_properties():
    rng = np.random.default_rng(3)
    for _ in range(50):
        data = np.zeros(tuple(rng.integers(2, 9, size=3)))
        picks = rng.integers(0, 4)
        for _ in range(picks):
            idx = tuple(int(rng.integers(0, n)) for n in data.shape)
            data[idx] = rng.normal()
        vol = _vol(data)
        crop = crop_nonzero(vol)
        ox, oy, oz = crop.offset
        nx, ny, nz = crop.volume.dims
        for o, n, total in zip(crop.offset, crop.volume.dims, vol.dims):
            assert 0 <= o and o + n <= total
        outside = data.copy()
        outside[ox:ox + nx, oy:oy + ny, oz:oz + nz] = 0.0
        assert not outside.any()
        again = crop_nonzero(crop.volume)
        assert again.offset == (0, 0, 0)
        assert np.array_equal(again.volume.data, crop.volume.data)


def test_zscore_examples():
    assert zscore(_vol(np.array([-1.0, 1.0]).reshape(2, 1, 1))).flat().tolist() == [-1.0, 1.0]

    out = zscore(_vol(np.arange(1.0, 7.0).reshape(6, 1, 1))).flat()
    sigma = math.sqrt(35.0 / 12.0)
    expected = [(v - 3.5) / sigma for v in range(1, 7)]
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(out, [-1.4639, -0.8783, -0.2928, 0.2928, 0.8783, 1.4639], atol=1e-4)

    assert not zscore(_vol(np.full((2, 3, 2), 7.0))).data.any()


def test_zscore_statistics():
    rng = np.random.default_rng(5)
    for _ in range(20):
        vol = _vol(rng.normal(40.0, 12.0, size=tuple(rng.integers(1, 6, size=3))), spacing=(0.4, 0.4, 0.8))
        if vol.data.size < 2:
            continue
        out = zscore(vol)
        assert abs(float(np.mean(out.data))) <= 1e-9
        assert abs(float(np.std(out.data)) - 1.0) <= 1e-9
        assert out.spacing == vol.spacing
        assert np.array_equal(out.affine, vol.affine)


def test_resample_identity():
    rng = np.random.default_rng(9)
    vol = _vol(rng.normal(size=(5, 4, 3)), spacing=(0.7, 0.7, 1.2))
    out = resample(vol, (0.7, 0.7, 1.2))
    assert np.array_equal(out.data, vol.data)
    assert out.spacing == vol.spacing


def test_resample_profile():
    vol = _vol(np.array([0.0, 10.0]).reshape(2, 1, 1))
    out = resample(vol, (0.5, 1.0, 1.0))
    assert out.dims == (4, 1, 1)
    assert np.allclose(out.flat(), [0.0, 10.0 / 3.0, 20.0 / 3.0, 10.0], atol=1e-12)
    # first and last voxel centres stay put
    assert np.allclose(out.voxel_to_world((0, 0, 0)), vol.voxel_to_world((0, 0, 0)))
    assert np.allclose(out.voxel_to_world((3, 0, 0)), vol.voxel_to_world((1, 0, 0)))


def test_resample_dims_and_envelope():
    rng = np.random.default_rng(13)
    for _ in range(20):
        dims = tuple(int(d) for d in rng.integers(1, 10, size=3))
        spacing = tuple(float(s) for s in rng.uniform(0.3, 2.0, size=3))
        target = tuple(float(s) for s in rng.uniform(0.3, 2.0, size=3))
        vol = _vol(rng.uniform(-5.0, 5.0, size=dims), spacing=spacing)
        out = resample(vol, target, "trilinear")
        expected = tuple(max(1, int(math.floor(n * s / t + 0.5))) for n, s, t in zip(dims, spacing, target))
        assert out.dims == expected
        assert out.data.min() >= vol.data.min() - 1e-12
        assert out.data.max() <= vol.data.max() + 1e-12


def test_resample_rounds_half_up_without_warnings():
    vol = _vol(np.arange(5, dtype=np.float64).reshape(5, 1, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = resample(vol, (2.0, 1.0, 1.0))
    assert out.dims == (3, 1, 1)
    assert np.allclose(out.flat(), [0.0, 2.0, 4.0], atol=1e-12)
    assert resample(_vol(np.ones((3, 1, 1))), (2.0, 1.0, 1.0)).dims == (2, 1, 1)


def test_resample_nearest_keeps_values():
    rng = np.random.default_rng(17)
    mask = _vol((rng.random((8, 7, 5)) > 0.6).astype(np.float64) * 3.0, spacing=(0.5, 0.5, 1.0))
    out = resample(mask, (0.8, 0.3, 0.7), "nearest")
    assert set(np.unique(out.data)) <= set(np.unique(mask.data))


def test_resample_rejects_bad_arguments():
    vol = _vol(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        resample(vol, (1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        resample(vol, (1.0, 1.0, 1.0), "cubic")


def test_preprocess_chain():
    data = np.zeros((6, 6, 6))
    data[1:4, 2:5, 3:5] = np.arange(18, dtype=np.float64).reshape(3, 3, 2) + 1.0
    vol, offset = preprocess_volume(_vol(data), (1.0, 1.0, 1.0))
    assert offset == (1, 2, 3)
    assert vol.dims == (3, 3, 2)
    assert abs(float(np.mean(vol.data))) <= 1e-9


def main() -> None:
    test_volume_invariants()
    test_crop_single_voxel()
    test_crop_corner_pair_and_all_zero()
    test_crop_properties()
    test_zscore_examples()
    test_zscore_statistics()
    test_resample_identity()
    test_resample_profile()
    test_resample_dims_and_envelope()
    test_resample_rounds_half_up_without_warnings()
    test_resample_nearest_keeps_values()
    test_resample_rejects_bad_arguments()
    test_preprocess_chain()
    print("Preprocess test: OK")


if __name__ == "__main__":
    main()
