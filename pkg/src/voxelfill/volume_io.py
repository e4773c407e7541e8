"""Volumetric scan I/O: a NIfTI-1 subset plus the internal .rawvol format.

Supported NIfTI subset: single-file little-endian .nii / .nii.gz, 3D (or
4D with a singleton fourth axis), datatype codes 2 (uint8), 4 (int16) and
16 (float32), sform affines. qform-only files are rejected rather than
decoding quaternions. Everything loads as float32 with scl_slope/scl_inter
applied.

.rawvol is the internal intermediate format: a 64-byte header (magic
"RVOL", version, 3 dims, 3 float64 spacings, zero padding) followed by a
float32 little-endian C-order payload. 2D slices are stored with a
trailing dim of 1.
"""

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    NonFiniteData,
    ShapeMismatch,
    TruncatedFile,
    UnsupportedDatatype,
    UnsupportedHeader,
)

# NIfTI-1 header layout, 348 bytes, little-endian. Field offsets follow the
# nifti1.h reference struct.
HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "<i4"),        # 0;   must be 348
    ("data_type", "S10"),         # 4;   unused
    ("db_name", "S18"),           # 14;  unused
    ("extents", "<i4"),           # 32;  unused
    ("session_error", "<i2"),     # 36;  unused
    ("regular", "S1"),            # 38;  unused
    ("dim_info", "u1"),           # 39;  MRI slice ordering
    ("dim", "<i2", (8,)),         # 40;  data array dimensions
    ("intent_p1", "<f4"),         # 56
    ("intent_p2", "<f4"),         # 60
    ("intent_p3", "<f4"),         # 64
    ("intent_code", "<i2"),       # 68
    ("datatype", "<i2"),          # 70;  storage type code
    ("bitpix", "<i2"),            # 72;  bits per voxel
    ("slice_start", "<i2"),       # 74
    ("pixdim", "<f4", (8,)),      # 76;  grid spacings
    ("vox_offset", "<f4"),        # 108; byte offset of image data
    ("scl_slope", "<f4"),         # 112; intensity scaling slope
    ("scl_inter", "<f4"),         # 116; intensity scaling intercept
    ("slice_end", "<i2"),         # 120
    ("slice_code", "u1"),         # 122
    ("xyzt_units", "u1"),         # 123
    ("cal_max", "<f4"),           # 124
    ("cal_min", "<f4"),           # 128
    ("slice_duration", "<f4"),    # 132
    ("toffset", "<f4"),           # 136
    ("glmax", "<i4"),             # 140
    ("glmin", "<i4"),             # 144
    ("descrip", "S80"),           # 148
    ("aux_file", "S24"),          # 228
    ("qform_code", "<i2"),        # 252
    ("sform_code", "<i2"),        # 254
    ("quatern_b", "<f4"),         # 256
    ("quatern_c", "<f4"),         # 260
    ("quatern_d", "<f4"),         # 264
    ("qoffset_x", "<f4"),         # 268
    ("qoffset_y", "<f4"),         # 272
    ("qoffset_z", "<f4"),         # 276
    ("srow_x", "<f4", (4,)),      # 280; first affine row
    ("srow_y", "<f4", (4,)),      # 296
    ("srow_z", "<f4", (4,)),      # 312
    ("intent_name", "S16"),       # 328
    ("magic", "S4"),              # 344; "n+1\0" or "ni1\0"
])
assert HEADER_DTYPE.itemsize == 348

# datatype code -> numpy dtype, restricted subset
_DTYPES = {2: np.dtype("u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}

RAWVOL_MAGIC = b"RVOL"
RAWVOL_VERSION = 1
_RAWVOL_HEADER = 64


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with voxel spacing and a voxel-to-world affine.

    ``data`` is float32 indexed [x, y, z]; ``spacing`` is mm per voxel;
    ``affine`` maps homogeneous voxel indices to world mm.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeMismatch(f"volume data must be 3D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise NonFiniteData(f"volume '{self.name}' contains NaN/Inf")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ShapeMismatch(f"spacing must be 3 positive lengths, got {spacing}")
        affine = self.affine
        if affine is None:
            affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        affine = np.asarray(affine, dtype=np.float64)
        if affine.shape != (4, 4) or not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ShapeMismatch("affine must be 4x4 with last row (0,0,0,1)")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data: np.ndarray, name: str = None) -> "Volume":
        """New volume with the same pose but different intensities."""
        return Volume(data, self.spacing, self.affine,
                      self.name if name is None else name)


@dataclass
class NiftiHeader:
    """Decoded subset of the 348-byte NIfTI-1 header."""

    dim: tuple
    datatype_code: int
    scl_slope: float
    scl_inter: float
    pixdim: tuple
    vox_offset: int
    sform_code: int
    srows: np.ndarray = field(default=None)


def _read_file_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":  # gzip signature
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedFile(f"corrupt gzip stream in {path}: {exc}") from exc
    return raw


def _parse_header(raw: bytes, path: Path) -> NiftiHeader:
    if len(raw) < HEADER_DTYPE.itemsize:
        raise TruncatedFile(f"{path}: shorter than a NIfTI-1 header")
    hdr = np.frombuffer(raw[: HEADER_DTYPE.itemsize], HEADER_DTYPE)[0]
    if int(hdr["sizeof_hdr"]) != 348 or hdr["magic"] not in (b"n+1", b"ni1"):
        raise BadMagic(f"{path}: not a little-endian NIfTI-1 file")
    if hdr["magic"] == b"ni1":
        raise UnsupportedHeader(f"{path}: two-file (.hdr/.img) NIfTI is not supported")

    ndim = int(hdr["dim"][0])
    if ndim not in (3, 4):
        raise UnsupportedHeader(f"{path}: dim[0] must be 3 or 4, got {ndim}")
    if ndim == 4 and int(hdr["dim"][4]) != 1:
        raise UnsupportedHeader(f"{path}: 4D data only supported with a singleton fourth axis")
    dim = tuple(int(d) for d in hdr["dim"][1:4])
    if min(dim) < 1:
        raise UnsupportedHeader(f"{path}: non-positive dimension in {dim}")

    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {code} outside supported subset")

    sform_code = int(hdr["sform_code"])
    srows = None
    if sform_code > 0:
        srows = np.vstack([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]]).astype(np.float64)
    elif int(hdr["qform_code"]) > 0:
        raise UnsupportedHeader(f"{path}: qform-only orientation (quaternions) not supported")

    pixdim = tuple(float(p) for p in hdr["pixdim"][1:4])
    if any(not np.isfinite(p) or p <= 0 for p in pixdim):
        raise UnsupportedHeader(f"{path}: non-positive pixdim {pixdim}")

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if not np.isfinite(slope):
        slope = 0.0
    if not np.isfinite(inter):
        inter = 0.0

    return NiftiHeader(
        dim=dim,
        datatype_code=code,
        scl_slope=slope,
        scl_inter=inter,
        pixdim=pixdim,
        vox_offset=max(int(hdr["vox_offset"]), HEADER_DTYPE.itemsize),
        sform_code=sform_code,
        srows=srows,
    )


def read_volume(path) -> Volume:
    """Load a .nii / .nii.gz / .rawvol file as a float32 Volume."""
    path = Path(path)
    name = path.name
    for ext in (".gz", ".nii", ".rawvol"):
        name = name.removesuffix(ext)
    if path.name.endswith(".rawvol"):
        data, spacing = read_rawvol(path)
        if data.ndim == 2:
            data = data[:, :, None]
        return Volume(data, spacing, None, name)

    raw = _read_file_bytes(path)
    hdr = _parse_header(raw, path)
    dtype = _DTYPES[hdr.datatype_code]
    nbytes = int(np.prod(hdr.dim)) * dtype.itemsize
    payload = raw[hdr.vox_offset : hdr.vox_offset + nbytes]
    if len(payload) < nbytes:
        raise TruncatedFile(
            f"{path}: expected {nbytes} data bytes at offset {hdr.vox_offset}, "
            f"found {len(payload)}"
        )
    # NIfTI stores x fastest; Fortran order reshape yields data[x, y, z].
    stored = np.frombuffer(payload, dtype=dtype).reshape(hdr.dim, order="F")
    data = stored.astype(np.float32)
    if hdr.scl_slope != 0.0 and (hdr.scl_slope, hdr.scl_inter) != (1.0, 0.0):
        data = data * np.float32(hdr.scl_slope) + np.float32(hdr.scl_inter)
    if not np.isfinite(data).all():
        raise NonFiniteData(f"{path}: intensities contain NaN/Inf")

    if hdr.srows is not None:
        affine = np.vstack([hdr.srows, [0.0, 0.0, 0.0, 1.0]])
    else:
        affine = np.diag([hdr.pixdim[0], hdr.pixdim[1], hdr.pixdim[2], 1.0])
    return Volume(data, hdr.pixdim, affine, name)


def write_volume(v: Volume, path) -> None:
    """Write a Volume as a float32 little-endian single-file NIfTI-1.

    Gzip-compresses when the path ends in .gz. Written headers carry
    scl_slope=1, scl_inter=0 and the volume's affine as sform.
    """
    path = Path(path)
    hdr = np.zeros((), HEADER_DTYPE)
    hdr["sizeof_hdr"] = 348
    hdr["dim"][0] = 3
    hdr["dim"][1:4] = v.data.shape
    hdr["dim"][4:] = 1
    hdr["datatype"] = 16
    hdr["bitpix"] = 32
    hdr["pixdim"][0] = 1.0
    hdr["pixdim"][1:4] = v.spacing
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["sform_code"] = 1
    hdr["srow_x"] = v.affine[0]
    hdr["srow_y"] = v.affine[1]
    hdr["srow_z"] = v.affine[2]
    hdr["magic"] = b"n+1"

    blob = hdr.tobytes() + b"\x00" * 4  # 4 pad bytes: no extensions
    blob += np.ascontiguousarray(v.data, dtype="<f4").tobytes(order="F")
    try:
        if path.name.endswith(".gz"):
            # mtime pinned so identical volumes give identical bytes
            blob = gzip.compress(blob, mtime=0)
        path.write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_mask(path) -> Volume:
    """Load a volume and binarize it: stored value > 0.5 maps to 1, else 0."""
    v = read_volume(path)
    return v.with_data((v.data > 0.5).astype(np.float32))


# ------------------------------------------------------------------ rawvol

def write_rawvol(path, data: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a 2D or 3D float32 array in the internal .rawvol format."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise ShapeMismatch(f"rawvol payload must be 2D or 3D, got shape {data.shape}")
    header = bytearray(_RAWVOL_HEADER)
    header[0:4] = RAWVOL_MAGIC
    header[4:8] = np.uint32(RAWVOL_VERSION).tobytes()
    header[8:20] = np.asarray(data.shape, dtype="<u4").tobytes()
    header[20:44] = np.asarray(spacing, dtype="<f8").tobytes()
    try:
        Path(path).write_bytes(bytes(header) + data.astype("<f4").tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_rawvol(path):
    """Read a .rawvol file; returns (data, spacing). 2D payloads come back 2D."""
    raw = _read_file_bytes(Path(path))
    if len(raw) < _RAWVOL_HEADER:
        raise TruncatedFile(f"{path}: shorter than a rawvol header")
    if raw[0:4] != RAWVOL_MAGIC:
        raise BadMagic(f"{path}: not a rawvol file")
    version = int(np.frombuffer(raw[4:8], "<u4")[0])
    if version != RAWVOL_VERSION:
        raise UnsupportedHeader(f"{path}: rawvol version {version} unsupported")
    dims = tuple(int(d) for d in np.frombuffer(raw[8:20], "<u4"))
    spacing = tuple(float(s) for s in np.frombuffer(raw[20:44], "<f8"))
    if min(dims) < 1:
        raise UnsupportedHeader(f"{path}: bad dims {dims}")
    nbytes = int(np.prod(dims)) * 4
    payload = raw[_RAWVOL_HEADER : _RAWVOL_HEADER + nbytes]
    if len(payload) < nbytes:
        raise TruncatedFile(f"{path}: rawvol payload truncated")
    data = np.frombuffer(payload, "<f4").reshape(dims, order="C").copy()
    if not np.isfinite(data).all():
        raise NonFiniteData(f"{path}: rawvol payload contains NaN/Inf")
    if dims[2] == 1:
        data = data[:, :, 0]
    return data, spacing
