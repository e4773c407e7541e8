"""Preprocessing for the two model families and its exact inverses.

The 2D path z-scores intensities and splits volumes into per-axis slices;
the 3D path cuts a fixed-size window centered on the tumor mask and
rescales to [-1, 1]. Both paths record enough state to map model output
back to the original intensity domain, and masked recomposition guarantees
voxels outside the mask are returned untouched.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import EmptyDomain, EmptyMask, ShapeMismatch, ZeroVariance
from .volume_io import Volume

DEFAULT_CROP_SIZE = (96, 96, 96)


@dataclass(frozen=True)
class ZScoreStats:
    """Mean/std of the normalization domain; inverts the transform exactly."""

    mean: float
    std: float
    domain: str = "nonzero"  # "nonzero" or "all"

    def apply(self, data: np.ndarray) -> np.ndarray:
        return ((data - self.mean) / self.std).astype(np.float32)

    def invert(self, data: np.ndarray) -> np.ndarray:
        return (data * self.std + self.mean).astype(np.float32)


@dataclass(frozen=True)
class MinMaxStats:
    """[lo, hi] of the normalization domain, mapped affinely onto [-1, 1]."""

    lo: float
    hi: float
    domain: str = "nonzero"

    def apply(self, data: np.ndarray) -> np.ndarray:
        return (2.0 * (data - self.lo) / (self.hi - self.lo) - 1.0).astype(np.float32)

    def invert(self, data: np.ndarray) -> np.ndarray:
        return ((data + 1.0) * 0.5 * (self.hi - self.lo) + self.lo).astype(np.float32)


NormStats = Union[ZScoreStats, MinMaxStats]


@dataclass(frozen=True)
class CropWindow:
    """Placement of a fixed-size window inside a source volume.

    ``origin`` may be negative or exceed the source bounds; the out-of-bounds
    portion is zero padding, recorded per axis in pad_low/pad_high.
    """

    origin: tuple
    size: tuple
    pad_low: tuple
    pad_high: tuple


@dataclass
class MaskedSample:
    """One model input: voided image, binary mask, optional target/window."""

    image: Volume
    mask: Volume
    target: Optional[Volume] = None
    window: Optional[CropWindow] = None
    stats: Optional[NormStats] = None

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ShapeMismatch("image and mask dimensions differ")
        if self.target is not None and self.target.shape != self.image.shape:
            raise ShapeMismatch("target dimensions differ from image")


def _domain_values(data: np.ndarray, domain: str) -> np.ndarray:
    if domain == "nonzero":
        return data[data != 0]
    if domain == "all":
        return data.reshape(-1)
    raise ValueError(f"unknown normalization domain {domain!r}")


def zscore_normalize(v: Volume, domain: str = "nonzero"):
    """Standardize intensities using mean/std of the chosen voxel domain.

    The affine transform is applied to every voxel; the domain only selects
    which voxels define the statistics. Population (1/N) std. Returns the
    normalized volume and the stats needed for exact inversion.
    """
    values = _domain_values(v.data, domain).astype(np.float64)
    if values.size < 2:
        raise EmptyDomain(f"domain '{domain}' selects {values.size} voxels, need >= 2")
    mean = float(values.mean())
    std = float(values.std())  # population
    if std < 1e-8:
        raise ZeroVariance(f"domain std {std:.3e} below 1e-8")
    stats = ZScoreStats(mean, std, domain)
    return v.with_data(stats.apply(v.data)), stats


def zscore_invert(v: Volume, stats: ZScoreStats) -> Volume:
    """Undo zscore_normalize."""
    return v.with_data(stats.invert(v.data))


def minmax_normalize(v: Volume, domain: str = "nonzero"):
    """Rescale intensities to [-1, 1] by the domain's min/max (diffusion path)."""
    values = _domain_values(v.data, domain)
    if values.size < 2:
        raise EmptyDomain(f"domain '{domain}' selects {values.size} voxels, need >= 2")
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-8:
        raise ZeroVariance(f"domain range {hi - lo:.3e} below 1e-8")
    stats = MinMaxStats(lo, hi, domain)
    return v.with_data(stats.apply(v.data)), stats


def minmax_invert(v: Volume, stats: MinMaxStats) -> Volume:
    return v.with_data(stats.invert(v.data))


def extract_slices(v: Volume, axis: int = 2):
    """Split a volume into its ordered 2D planes along the given axis."""
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    return [np.ascontiguousarray(np.take(v.data, k, axis=axis))
            for k in range(v.data.shape[axis])]


def reassemble_slices(slices, axis: int = 2, like: Optional[Volume] = None) -> Volume:
    """Inverse of extract_slices. ``like`` supplies spacing/affine/name."""
    if not slices:
        raise ShapeMismatch("no slices to reassemble")
    shape0 = slices[0].shape
    if any(s.shape != shape0 for s in slices):
        raise ShapeMismatch("slices have differing shapes")
    data = np.stack(slices, axis=axis)
    if like is not None:
        if data.shape != like.shape:
            raise ShapeMismatch(f"reassembled shape {data.shape} != template {like.shape}")
        return like.with_data(data)
    return Volume(data)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # ties round toward +inf, per-axis, for a reproducible centroid
    return np.floor(x + 0.5).astype(np.int64)


def crop_about_mask(v: Volume, mask: Volume, size=DEFAULT_CROP_SIZE):
    """Cut a fixed-size window centered on the mask centroid.

    Out-of-bounds regions are zero padded and the padding recorded, so the
    output always has exactly the requested size. Returns (cropped image,
    cropped mask, CropWindow).
    """
    if v.shape != mask.shape:
        raise ShapeMismatch(f"volume {v.shape} vs mask {mask.shape}")
    size = tuple(int(s) for s in size)
    count = float(mask.data.sum())
    if count == 0:
        raise EmptyMask("mask has no set voxels")
    idx = np.nonzero(mask.data)
    centroid = np.array([idx[a].astype(np.float64).sum() / count for a in range(3)])
    origin = _round_half_up(centroid) - np.array(size) // 2

    dims = np.array(v.shape)
    lo = np.maximum(origin, 0)
    hi = np.minimum(origin + size, dims)
    pad_low = np.maximum(-origin, 0)
    pad_high = np.maximum(origin + size - dims, 0)

    window = CropWindow(
        origin=tuple(int(o) for o in origin),
        size=size,
        pad_low=tuple(int(p) for p in pad_low),
        pad_high=tuple(int(p) for p in pad_high),
    )

    def cut(data):
        out = np.zeros(size, dtype=np.float32)
        src = tuple(slice(lo[a], hi[a]) for a in range(3))
        dst = tuple(slice(pad_low[a], size[a] - pad_high[a]) for a in range(3))
        out[dst] = data[src]
        return out

    # carry the window translation into the crop's affine
    affine = v.affine.copy()
    affine[:3, 3] += affine[:3, :3] @ origin.astype(np.float64)
    img = Volume(cut(v.data), v.spacing, affine, v.name)
    msk = Volume(cut(mask.data), v.spacing, affine, mask.name)
    return img, msk, window


def paste_crop(dest: Volume, patch: Volume, window: CropWindow) -> Volume:
    """Write a window-sized patch back into a full volume.

    Padded (out-of-bounds) patch regions are discarded; everything outside
    the window interior is untouched.
    """
    if patch.shape != window.size:
        raise ShapeMismatch(f"patch {patch.shape} != window size {window.size}")
    dims = np.array(dest.shape)
    origin = np.array(window.origin)
    size = np.array(window.size)
    lo = np.maximum(origin, 0)
    hi = np.minimum(origin + size, dims)
    out = dest.data.copy()
    src = tuple(slice(lo[a], hi[a]) for a in range(3))
    inner = tuple(slice(window.pad_low[a], size[a] - window.pad_high[a]) for a in range(3))
    out[src] = patch.data[inner]
    return dest.with_data(out)


def compose_output(original: Volume, mask: Volume, prediction: Volume) -> Volume:
    """Prediction inside the mask, original (bit-exact) everywhere else."""
    if not (original.shape == mask.shape == prediction.shape):
        raise ShapeMismatch(
            f"shapes differ: {original.shape}, {mask.shape}, {prediction.shape}"
        )
    data = np.where(mask.data > 0.5, prediction.data, original.data)
    return original.with_data(data)


def void_region(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out the masked region."""
    out = data.copy()
    out[mask > 0.5] = 0.0
    return out


def prepare_gan_sample(scan: Volume, mask: Volume, target: Optional[Volume] = None,
                       domain: str = "nonzero") -> MaskedSample:
    """Normalized 2D-model input from a scan and its tumor mask.

    Stats come from the already-voided scan so train and inference see the
    same domain. After normalization the background and the voided region
    are both exactly 0.
    """
    if scan.shape != mask.shape:
        raise ShapeMismatch(f"scan {scan.shape} vs mask {mask.shape}")
    voided = void_region(scan.data, mask.data)
    _, stats = zscore_normalize(scan.with_data(voided), domain)

    def normalize(data):
        out = stats.apply(data)
        out[data == 0] = 0.0  # keep background at the void value
        return out

    image = scan.with_data(normalize(voided))
    tgt = None if target is None else target.with_data(normalize(target.data))
    return MaskedSample(image=image, mask=mask, target=tgt, stats=stats)


def prepare_diffusion_sample(scan: Volume, mask: Volume, target: Optional[Volume] = None,
                             size=DEFAULT_CROP_SIZE, domain: str = "nonzero") -> MaskedSample:
    """Mask-centered crop rescaled to [-1, 1] for the 3D diffusion model."""
    crop_img, crop_mask, window = crop_about_mask(scan, mask, size)
    voided = void_region(crop_img.data, crop_mask.data)
    nz = voided[voided != 0]
    if nz.size < 2:
        raise EmptyDomain("crop contains too few nonzero voxels outside the mask")
    _, stats = minmax_normalize(crop_img.with_data(voided), domain)
    image = crop_img.with_data(void_region(stats.apply(crop_img.data), crop_mask.data))
    tgt = None
    if target is not None:
        crop_tgt, _, _ = crop_about_mask(target, mask, size)
        tgt = crop_tgt.with_data(stats.apply(crop_tgt.data))
    return MaskedSample(image=image, mask=crop_mask, target=tgt,
                        window=window, stats=stats)
