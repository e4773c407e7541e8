import numpy as np
import pytest

from voxelfill.errors import EmptyMask, ShapeMismatch, ZeroVariance
from voxelfill.preprocess import (
    CropWindow,
    ZScoreStats,
    compose_output,
    crop_about_mask,
    extract_slices,
    minmax_invert,
    minmax_normalize,
    paste_crop,
    prepare_diffusion_sample,
    prepare_gan_sample,
    reassemble_slices,
    zscore_invert,
    zscore_normalize,
)
from voxelfill.volume_io import Volume


def vol(data, **kw):
    return Volume(np.asarray(data, dtype=np.float32), **kw)


# ----------------------------------------------------------------- z-score

def test_zscore_constant_raises():
    with pytest.raises(ZeroVariance):
        zscore_normalize(vol(np.full((3, 3, 3), 2.0)), "all")


def test_zscore_known_values():
    # oracle: two-pass mean/std over {1,2,3}: mean 2, population std sqrt(2/3)
    data = np.zeros((3, 1, 1), dtype=np.float32)
    data[:, 0, 0] = [1.0, 2.0, 3.0]
    out, stats = zscore_normalize(vol(data), "all")
    assert stats.mean == pytest.approx(2.0)
    assert stats.std == pytest.approx(np.sqrt(2.0 / 3.0), abs=1e-12)
    assert np.allclose(out.data[:, 0, 0], [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_zscore_postcondition(rng):
    data = rng.uniform(1.0, 5.0, size=(8, 8, 8)).astype(np.float32)
    out, _ = zscore_normalize(vol(data), "all")
    assert abs(out.data.mean()) < 1e-6
    assert abs(out.data.std() - 1.0) < 1e-6


def test_zscore_nonzero_domain(rng):
    data = rng.uniform(1.0, 5.0, size=(8, 8, 8)).astype(np.float32)
    data[:4] = 0.0
    out, stats = zscore_normalize(vol(data), "nonzero")
    domain = out.data[data != 0]
    assert abs(domain.mean()) < 1e-6
    assert abs(domain.std() - 1.0) < 1e-6
    assert stats.domain == "nonzero"


def test_zscore_invert_identity_stats(rng):
    v = vol(rng.standard_normal((4, 4, 4)))
    out = zscore_invert(v, ZScoreStats(0.0, 1.0, "all"))
    assert np.array_equal(out.data, v.data)


def test_zscore_roundtrip(rng):
    for _ in range(20):
        data = rng.uniform(-3.0, 7.0, size=(6, 5, 4)).astype(np.float32)
        v = vol(data)
        norm, stats = zscore_normalize(v, "all")
        back = zscore_invert(norm, stats)
        scale = float(data.max() - data.min())
        assert np.abs(back.data - data).max() < 1e-5 * scale


def test_zscore_invert_known():
    data = np.zeros((3, 1, 1), dtype=np.float32)
    data[:, 0, 0] = [-1.2247, 0.0, 1.2247]
    out = zscore_invert(vol(data), ZScoreStats(2.0, 0.8165, "all"))
    assert np.allclose(out.data[:, 0, 0], [1.0, 2.0, 3.0], atol=1e-4)


def test_minmax_roundtrip(rng):
    data = rng.uniform(0.5, 4.0, size=(5, 5, 5)).astype(np.float32)
    norm, stats = minmax_normalize(vol(data), "all")
    assert norm.data.min() == pytest.approx(-1.0, abs=1e-6)
    assert norm.data.max() == pytest.approx(1.0, abs=1e-6)
    back = minmax_invert(norm, stats)
    assert np.abs(back.data - data).max() < 1e-5 * (data.max() - data.min())


# ------------------------------------------------------------------ slicing

def test_extract_slices_shape(rng):
    v = vol(rng.standard_normal((4, 4, 4)))
    slices = extract_slices(v, axis=2)
    assert len(slices) == 4
    assert all(s.shape == (4, 4) for s in slices)


def test_slice_roundtrip_all_axes(rng):
    v = vol(rng.standard_normal((5, 6, 7)))
    for axis in (0, 1, 2):
        back = reassemble_slices(extract_slices(v, axis), axis, like=v)
        assert np.array_equal(back.data, v.data)


def test_one_hot_slice_location():
    data = np.zeros((4, 4, 4), dtype=np.float32)
    data[1, 3, 2] = 1.0
    slices = extract_slices(vol(data), axis=2)
    nonzero = [k for k, s in enumerate(slices) if s.any()]
    assert nonzero == [2]


def test_reassemble_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        reassemble_slices([np.zeros((2, 2)), np.zeros((3, 2))], 2)


# ----------------------------------------------------------------- cropping

def centroid_oracle(mask):
    # brute-force centroid sum, rounded half toward +inf
    idx = np.argwhere(mask > 0.5).astype(np.float64)
    c = idx.mean(axis=0)
    return np.floor(c + 0.5).astype(int)


def sphere_mask(dims, center, radius):
    grids = np.ogrid[tuple(slice(0, n) for n in dims)]
    d2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return (d2 <= radius * radius).astype(np.float32)


def test_crop_centered_interior():
    mask = sphere_mask((128, 128, 128), (64, 64, 64), 10)
    v = vol(np.ones((128, 128, 128)))
    img, msk, window = crop_about_mask(v, vol(mask), (96, 96, 96))
    expect = tuple(centroid_oracle(mask) - 48)
    assert window.origin == expect == (16, 16, 16)
    assert window.pad_low == (0, 0, 0) and window.pad_high == (0, 0, 0)
    assert img.shape == (96, 96, 96)


def test_crop_corner_padding():
    mask = np.zeros((128, 128, 128), dtype=np.float32)
    mask[4, 4, 4] = 1.0
    v = vol(np.ones((128, 128, 128)))
    _, _, window = crop_about_mask(v, vol(mask), (96, 96, 96))
    assert window.origin == (-44, -44, -44)
    assert window.pad_low == (44, 44, 44)
    assert window.pad_high == (0, 0, 0)


def test_crop_preserves_mask_count_when_contained(rng):
    mask = sphere_mask((64, 64, 64), (30, 28, 33), 6)
    v = vol(rng.standard_normal((64, 64, 64)))
    _, msk, _ = crop_about_mask(v, vol(mask), (32, 32, 32))
    assert msk.data.sum() == mask.sum()


def test_crop_output_size_everywhere(rng):
    # every mask position, including corners, yields exactly the requested size
    for pos in [(0, 0, 0), (31, 31, 31), (0, 15, 31), (16, 16, 16)]:
        mask = np.zeros((32, 32, 32), dtype=np.float32)
        mask[pos] = 1.0
        img, msk, _ = crop_about_mask(vol(np.ones((32, 32, 32))), vol(mask), (24, 24, 24))
        assert img.shape == (24, 24, 24)
        assert msk.shape == (24, 24, 24)


def test_crop_empty_mask():
    with pytest.raises(EmptyMask):
        crop_about_mask(vol(np.ones((8, 8, 8))), vol(np.zeros((8, 8, 8))), (4, 4, 4))


def test_paste_crop_roundtrip(rng):
    for _ in range(20):
        v = vol(rng.standard_normal((40, 40, 40)))
        mask = sphere_mask((40, 40, 40), tuple(rng.integers(4, 36, 3)), 3)
        img, _, window = crop_about_mask(v, vol(mask), (24, 24, 24))
        back = paste_crop(v, img, window)
        assert np.array_equal(back.data, v.data)


def test_paste_zero_patch_zeroes_interior_only(rng):
    v = vol(rng.standard_normal((32, 32, 32)) + 5.0)
    window = CropWindow(origin=(4, 6, 8), size=(8, 8, 8),
                        pad_low=(0, 0, 0), pad_high=(0, 0, 0))
    out = paste_crop(v, vol(np.zeros((8, 8, 8))), window)
    region = (slice(4, 12), slice(6, 14), slice(8, 16))
    assert np.all(out.data[region] == 0.0)
    changed = out.data != v.data
    assert changed.sum() == 8 ** 3


def test_paste_shape_mismatch():
    window = CropWindow((0, 0, 0), (4, 4, 4), (0, 0, 0), (0, 0, 0))
    with pytest.raises(ShapeMismatch):
        paste_crop(vol(np.zeros((8, 8, 8))), vol(np.zeros((5, 4, 4))), window)


# -------------------------------------------------------------- composition

def test_compose_zero_mask_is_original(rng):
    orig = vol(rng.standard_normal((6, 6, 6)))
    pred = vol(rng.standard_normal((6, 6, 6)))
    out = compose_output(orig, vol(np.zeros((6, 6, 6))), pred)
    assert np.array_equal(out.data, orig.data)


def test_compose_full_mask_is_prediction(rng):
    orig = vol(rng.standard_normal((6, 6, 6)))
    pred = vol(rng.standard_normal((6, 6, 6)))
    out = compose_output(orig, vol(np.ones((6, 6, 6))), pred)
    assert np.array_equal(out.data, pred.data)


def test_compose_matches_naive_loop(rng):
    orig = vol(rng.standard_normal((4, 4, 4)))
    pred = vol(rng.standard_normal((4, 4, 4)))
    mask = (rng.uniform(size=(4, 4, 4)) > 0.5).astype(np.float32)
    out = compose_output(orig, vol(mask), pred)
    # oracle: per-voxel loop
    for i in range(4):
        for j in range(4):
            for k in range(4):
                want = pred.data[i, j, k] if mask[i, j, k] == 1 else orig.data[i, j, k]
                assert out.data[i, j, k] == want


def test_compose_never_touches_outside(rng):
    orig = vol(rng.standard_normal((8, 8, 8)))
    pred = vol(rng.standard_normal((8, 8, 8)))
    mask = (rng.uniform(size=(8, 8, 8)) > 0.7).astype(np.float32)
    out = compose_output(orig, vol(mask), pred)
    outside = mask < 0.5
    assert np.array_equal(out.data[outside], orig.data[outside])


# ------------------------------------------------------------- sample prep

def head_phantom(rng):
    data = rng.uniform(0.5, 2.0, size=(16, 16, 16)).astype(np.float32)
    data[:4] = 0.0  # background
    mask = np.zeros((16, 16, 16), dtype=np.float32)
    mask[8:11, 8:11, 8:11] = 1.0
    return vol(data), vol(mask)


def test_prepare_gan_sample_voids_and_zeroes_background(rng):
    scan, mask = head_phantom(rng)
    s = prepare_gan_sample(scan, mask, target=scan)
    assert np.all(s.image.data[mask.data > 0.5] == 0.0)
    assert np.all(s.image.data[scan.data == 0] == 0.0)
    assert s.target is not None
    assert s.stats.std > 0


def test_prepare_diffusion_sample_window(rng):
    scan, mask = head_phantom(rng)
    s = prepare_diffusion_sample(scan, mask, target=scan, size=(8, 8, 8))
    assert s.image.shape == (8, 8, 8)
    assert s.window.size == (8, 8, 8)
    assert np.all(s.image.data[s.mask.data > 0.5] == 0.0)
    assert np.abs(s.image.data).max() <= 1.0 + 1e-6
