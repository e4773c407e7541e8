import gzip

import numpy as np
import pytest

from voxelfill.errors import (
    BadMagic,
    NonFiniteData,
    ShapeMismatch,
    TruncatedFile,
    UnsupportedDatatype,
    UnsupportedHeader,
)
from voxelfill.volume_io import (
    HEADER_DTYPE,
    Volume,
    read_mask,
    read_rawvol,
    read_volume,
    write_rawvol,
    write_volume,
)


def make_nifti_bytes(data, datatype_code, scl_slope=1.0, scl_inter=0.0,
                     sform=True, magic=b"n+1", dim0=3, pixdim=(1.0, 1.0, 1.0)):
    """Hand-assemble a minimal NIfTI-1 file for parser tests."""
    hdr = np.zeros((), HEADER_DTYPE)
    hdr["sizeof_hdr"] = 348
    hdr["dim"][0] = dim0
    hdr["dim"][1:4] = data.shape
    hdr["dim"][4:] = 1
    hdr["datatype"] = datatype_code
    hdr["bitpix"] = {2: 8, 4: 16, 16: 32}[datatype_code]
    hdr["pixdim"][1:4] = pixdim
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = scl_slope
    hdr["scl_inter"] = scl_inter
    if sform:
        hdr["sform_code"] = 1
        hdr["srow_x"] = [pixdim[0], 0, 0, 0]
        hdr["srow_y"] = [0, pixdim[1], 0, 0]
        hdr["srow_z"] = [0, 0, pixdim[2], 0]
    hdr["magic"] = magic
    return hdr.tobytes() + b"\x00" * 4 + data.tobytes(order="F")


def random_volume(rng, shape=(6, 5, 4)):
    data = rng.standard_normal(shape).astype(np.float32)
    # affines/spacings quantized to float32: the on-disk fields are f4
    spacing = np.abs(rng.standard_normal(3).astype(np.float32)) + 0.5
    affine = np.eye(4)
    affine[:3, :3] = np.diag(spacing)
    affine[:3, 3] = rng.standard_normal(3).astype(np.float32)
    return Volume(data, tuple(float(s) for s in spacing), affine, "rand")


def test_zero_volume_roundtrip_via_handmade_file(tmp_path):
    data = np.zeros((4, 4, 4), dtype="<f4")
    p = tmp_path / "zeros.nii"
    p.write_bytes(make_nifti_bytes(data, 16))
    v = read_volume(p)
    assert v.shape == (4, 4, 4)
    assert np.all(v.data == 0.0)


def test_write_read_roundtrip_bit_exact(tmp_path, rng):
    for i in range(20):
        v = random_volume(rng, shape=tuple(rng.integers(2, 9, size=3)))
        for suffix in (".nii", ".nii.gz"):
            p = tmp_path / f"case{i}{suffix}"
            write_volume(v, p)
            back = read_volume(p)
            assert np.array_equal(back.data, v.data)
            assert np.allclose(back.spacing, v.spacing, atol=1e-6)
            assert np.allclose(back.affine, v.affine, atol=1e-6)


def test_scl_slope_inter_applied(tmp_path):
    # int16 stored value 3 with slope 2, inter 1 -> 7.0 (slope * v + inter)
    data = np.full((2, 2, 2), 3, dtype="<i2")
    p = tmp_path / "scaled.nii"
    p.write_bytes(make_nifti_bytes(data, 4, scl_slope=2.0, scl_inter=1.0))
    v = read_volume(p)
    assert np.all(v.data == 7.0)


def test_scl_slope_zero_means_unscaled(tmp_path):
    data = np.full((2, 2, 2), 5, dtype="<i2")
    p = tmp_path / "unscaled.nii"
    p.write_bytes(make_nifti_bytes(data, 4, scl_slope=0.0, scl_inter=9.0))
    assert np.all(read_volume(p).data == 5.0)


def test_uint8_supported(tmp_path):
    data = np.arange(8, dtype="u1").reshape(2, 2, 2)
    p = tmp_path / "u8.nii"
    p.write_bytes(make_nifti_bytes(data, 2))
    assert np.array_equal(read_volume(p).data, data.astype(np.float32))


def test_header_bytes_decode_to_348(tmp_path, rng):
    p = tmp_path / "hdr.nii"
    write_volume(random_volume(rng), p)
    raw = p.read_bytes()
    assert int(np.frombuffer(raw[:4], "<i4")[0]) == 348


def test_written_pixdim_matches_spacing(tmp_path, rng):
    v = Volume(rng.standard_normal((3, 3, 3)).astype(np.float32), (1.0, 1.0, 1.0))
    p = tmp_path / "sp.nii"
    write_volume(v, p)
    hdr = np.frombuffer(p.read_bytes()[:348], HEADER_DTYPE)[0]
    assert np.all(hdr["pixdim"][1:4] == 1.0)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.nii"
    p.write_bytes(b"\x00" * 400)
    with pytest.raises(BadMagic):
        read_volume(p)


def test_two_file_nifti_rejected(tmp_path):
    data = np.zeros((2, 2, 2), dtype="<f4")
    p = tmp_path / "pair.nii"
    p.write_bytes(make_nifti_bytes(data, 16, magic=b"ni1"))
    with pytest.raises(UnsupportedHeader):
        read_volume(p)


def test_unsupported_datatype(tmp_path):
    p = tmp_path / "f64.nii"
    blob = bytearray(make_nifti_bytes(np.zeros((2, 2, 2), "<f4"), 16))
    blob[70:72] = np.int16(64).tobytes()  # float64 code
    p.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedDatatype):
        read_volume(p)


def test_truncated_payload(tmp_path):
    data = np.zeros((4, 4, 4), dtype="<f4")
    blob = make_nifti_bytes(data, 16)
    p = tmp_path / "trunc.nii"
    p.write_bytes(blob[:-40])
    with pytest.raises(TruncatedFile):
        read_volume(p)


def test_nan_payload_is_hard_error(tmp_path):
    data = np.zeros((2, 2, 2), dtype="<f4")
    data[0, 0, 0] = np.nan
    p = tmp_path / "nan.nii"
    p.write_bytes(make_nifti_bytes(data, 16))
    with pytest.raises(NonFiniteData):
        read_volume(p)


def test_qform_only_rejected(tmp_path):
    data = np.zeros((2, 2, 2), dtype="<f4")
    blob = bytearray(make_nifti_bytes(data, 16, sform=False))
    blob[252:254] = np.int16(1).tobytes()  # qform_code = 1
    p = tmp_path / "qform.nii"
    p.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedHeader):
        read_volume(p)


def test_4d_with_singleton_ok_larger_rejected(tmp_path):
    data = np.zeros((2, 2, 2), dtype="<f4")
    p = tmp_path / "ok4d.nii"
    p.write_bytes(make_nifti_bytes(data, 16, dim0=4))
    assert read_volume(p).shape == (2, 2, 2)

    blob = bytearray(make_nifti_bytes(data, 16, dim0=4))
    off = 40 + 4 * 2  # dim[4]
    blob[off:off + 2] = np.int16(3).tobytes()
    p2 = tmp_path / "bad4d.nii"
    p2.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedHeader):
        read_volume(p2)


def test_parser_ignores_trailing_garbage(tmp_path):
    # never reads past vox_offset + prod(dim) * bytes-per-voxel
    data = np.arange(8, dtype="<f4").reshape(2, 2, 2)
    p = tmp_path / "tail.nii"
    p.write_bytes(make_nifti_bytes(data, 16) + b"\xff" * 123)
    assert np.array_equal(read_volume(p).data, data)


def test_fortran_order_layout(tmp_path):
    # x must vary fastest in the payload
    data = np.zeros((3, 2, 2), dtype="<f4")
    data[1, 0, 0] = 7.0  # second stored value
    p = tmp_path / "order.nii"
    p.write_bytes(make_nifti_bytes(data, 16))
    v = read_volume(p)
    assert v.data[1, 0, 0] == 7.0


def test_gzip_transparent(tmp_path):
    data = np.arange(8, dtype="<f4").reshape(2, 2, 2)
    p = tmp_path / "vol.nii.gz"
    p.write_bytes(gzip.compress(make_nifti_bytes(data, 16)))
    assert np.array_equal(read_volume(p).data, data)


# ------------------------------------------------------------------- masks

def test_read_mask_zeros(tmp_path):
    p = tmp_path / "m0.nii"
    p.write_bytes(make_nifti_bytes(np.zeros((3, 3, 3), "<f4"), 16))
    assert np.all(read_mask(p).data == 0.0)


def test_read_mask_thresholds(tmp_path):
    stored = np.array([0, 1, 3, 0, 1, 3, 0, 1], dtype="<f4").reshape(2, 2, 2)
    p = tmp_path / "m.nii"
    p.write_bytes(make_nifti_bytes(stored, 16))
    m = read_mask(p)
    assert set(np.unique(m.data)) <= {0.0, 1.0}
    assert np.array_equal(m.data, (stored > 0.5).astype(np.float32))


def test_mask_count_matches_direct_count(tmp_path, rng):
    stored = rng.uniform(0, 1, size=(5, 4, 3)).astype("<f4")
    p = tmp_path / "mc.nii"
    p.write_bytes(make_nifti_bytes(stored, 16))
    m = read_mask(p)
    # oracle: direct count over the file contents
    assert int(m.data.sum()) == int((stored > 0.5).sum())


# ------------------------------------------------------------------ rawvol

def test_rawvol_roundtrip_3d(tmp_path, rng):
    data = rng.standard_normal((5, 6, 7)).astype(np.float32)
    p = tmp_path / "v.rawvol"
    write_rawvol(p, data, (1.5, 2.0, 2.5))
    back, spacing = read_rawvol(p)
    assert np.array_equal(back, data)
    assert spacing == (1.5, 2.0, 2.5)


def test_rawvol_roundtrip_2d(tmp_path, rng):
    data = rng.standard_normal((8, 9)).astype(np.float32)
    p = tmp_path / "s.rawvol"
    write_rawvol(p, data)
    back, _ = read_rawvol(p)
    assert back.shape == (8, 9)
    assert np.array_equal(back, data)


def test_rawvol_truncation_and_magic(tmp_path, rng):
    data = rng.standard_normal((4, 4, 4)).astype(np.float32)
    p = tmp_path / "t.rawvol"
    write_rawvol(p, data)
    blob = p.read_bytes()
    p.write_bytes(blob[:-10])
    with pytest.raises(TruncatedFile):
        read_rawvol(p)
    p.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(BadMagic):
        read_rawvol(p)


def test_read_volume_dispatches_rawvol(tmp_path, rng):
    data = rng.standard_normal((4, 4, 4)).astype(np.float32)
    p = tmp_path / "d.rawvol"
    write_rawvol(p, data)
    v = read_volume(p)
    assert isinstance(v, Volume)
    assert np.array_equal(v.data, data)


# ------------------------------------------------------------ Volume checks

def test_volume_invariants():
    with pytest.raises(ShapeMismatch):
        Volume(np.zeros((2, 2)))
    with pytest.raises(NonFiniteData):
        Volume(np.full((2, 2, 2), np.inf))
    with pytest.raises(ShapeMismatch):
        Volume(np.zeros((2, 2, 2)), spacing=(0.0, 1.0, 1.0))
    bad_affine = np.eye(4)
    bad_affine[3, 0] = 1.0
    with pytest.raises(ShapeMismatch):
        Volume(np.zeros((2, 2, 2)), affine=bad_affine)
