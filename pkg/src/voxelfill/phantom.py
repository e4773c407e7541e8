"""Deterministic synthetic brain-like volumes with tumor-like masks.

Every sample is a (healthy, mask, diseased) triple: an ellipsoidal head
with nested tissue shells and smooth texture, a spherical mask strictly
inside it, and a diseased copy that differs from healthy only inside the
mask (blur plus intensity shift). All randomness comes from the Philox
streams in :mod:`voxelfill.rng`, so bytes are identical across runs and
platforms for a given seed.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import IoFailure, SpecInfeasible
from .preprocess import MaskedSample, void_region
from .rng import STREAM_PHANTOM, rng_stream
from .volume_io import Volume, read_rawvol, write_rawvol

_PLACEMENT_ATTEMPTS = 64


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 64)
    semi_axes_range: tuple = (0.70, 0.85)   # fraction of the half-extent
    texture_sigma: float = 2.5              # blur radius of the noise field
    texture_amp: float = 0.08
    tumor_radius_range: tuple = (5.0, 8.0)  # voxels
    tumor_count: int = 1

    def __post_init__(self):
        if self.tumor_count != 1:
            raise SpecInfeasible("only single-tumor phantoms are supported")


def _ellipsoid_norm(dims, center, semi):
    grids = np.ogrid[tuple(slice(0, n) for n in dims)]
    rho = np.zeros(dims, dtype=np.float64)
    for g, c, s in zip(grids, center, semi):
        rho = rho + ((g - c) / s) ** 2
    return rho


def generate_phantom(spec: PhantomSpec, seed: int):
    """Build one (healthy, mask, diseased) triple for the given seed."""
    rng = rng_stream(seed, STREAM_PHANTOM)
    dims = tuple(int(d) for d in spec.dims)
    center = np.array([(d - 1) / 2.0 for d in dims])
    half = np.array([d / 2.0 for d in dims])
    semi = half * rng.uniform(*spec.semi_axes_range, size=3)

    rho = _ellipsoid_norm(dims, center, semi)
    inside = rho <= 1.0

    # nested tissue shells + smooth texture, strictly positive inside
    base = np.zeros(dims, dtype=np.float64)
    base[rho <= 1.0] = 0.45
    base[rho <= 0.72] = 0.70
    base[rho <= 0.34] = 1.00
    texture = gaussian_filter(rng.standard_normal(dims), spec.texture_sigma)
    texture *= spec.texture_amp / max(texture.std(), 1e-12)
    healthy = np.where(inside, np.clip(base + texture, 0.10, None), 0.0)

    radius = float(rng.uniform(*spec.tumor_radius_range))
    mask = None
    for _ in range(_PLACEMENT_ATTEMPTS):
        u = rng.uniform(-0.45, 0.45, size=3)
        c = center + u * semi
        lo = np.floor(c - radius).astype(int)
        hi = np.ceil(c + radius).astype(int) + 1
        if (lo < 0).any() or (hi > np.array(dims)).any():
            continue
        box = tuple(slice(l, h) for l, h in zip(lo, hi))
        grids = np.ogrid[box]
        dist2 = sum((g - ci) ** 2 for g, ci in zip(grids, c))
        ball = dist2 <= radius * radius
        # the whole ball must sit in comfortably-interior head tissue
        if np.all(rho[box][ball] <= 0.92):
            mask = np.zeros(dims, dtype=np.float32)
            mask[box][ball] = 1.0
            break
    if mask is None:
        raise SpecInfeasible(
            f"no placement for tumor radius {radius:.1f} in dims {dims}")

    shift = float(rng.uniform(0.25, 0.45))
    blurred = gaussian_filter(healthy, 2.0)
    diseased = healthy.copy()
    sel = mask > 0.5
    diseased[sel] = np.clip(blurred[sel] + shift, 0.05, None)

    name = f"phantom_{seed}"
    return (
        Volume(healthy, name=name + "_healthy"),
        Volume(mask, name=name + "_mask"),
        Volume(diseased, name=name + "_diseased"),
    )


@dataclass
class DatasetManifest:
    n: int
    base_seed: int
    dims: tuple
    entries: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "base_seed": self.base_seed,
            "dims": list(self.dims),
            "samples": self.entries,
        }


def generate_dataset(n: int, base_seed: int, spec: PhantomSpec = PhantomSpec()):
    """n raw samples with seeds base_seed..base_seed+n-1 plus a manifest.

    The sample image is the diseased scan with the mask region voided to 0
    (identical to the voided healthy scan, since the two differ only inside
    the mask). Last fifth of samples goes to the validation split.
    """
    if n < 1:
        raise SpecInfeasible("dataset size must be >= 1")
    samples = []
    manifest = DatasetManifest(n=n, base_seed=base_seed, dims=spec.dims)
    n_val = n // 5
    for i in range(n):
        seed = base_seed + i
        healthy, mask, diseased = generate_phantom(spec, seed)
        image = diseased.with_data(void_region(diseased.data, mask.data))
        samples.append(MaskedSample(image=image, mask=mask, target=healthy))
        manifest.entries.append({
            "id": f"sample_{i:03d}",
            "seed": seed,
            "split": "val" if i >= n - n_val else "train",
        })
    return samples, manifest


def save_dataset(out_dir, manifest: DatasetManifest,
                 spec: PhantomSpec = PhantomSpec()) -> None:
    """Write (healthy, mask, diseased) rawvol triples and manifest.json.

    Triples are regenerated from the per-entry seeds, which is cheap and
    guarantees the files match the manifest exactly.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    for entry in manifest.entries:
        d = out / entry["id"]
        d.mkdir(exist_ok=True)
        healthy, mask, diseased = generate_phantom(spec, entry["seed"])
        write_rawvol(d / "healthy.rawvol", healthy.data)
        write_rawvol(d / "mask.rawvol", mask.data)
        write_rawvol(d / "diseased.rawvol", diseased.data)
    (out / "manifest.json").write_text(
        json.dumps(manifest.to_json(), indent=2) + "\n")


def load_dataset(data_dir):
    """Read a saved dataset back into raw MaskedSamples (+ manifest dict)."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    samples = []
    for entry in manifest["samples"]:
        d = data_dir / entry["id"]
        healthy, _ = read_rawvol(d / "healthy.rawvol")
        mask, _ = read_rawvol(d / "mask.rawvol")
        diseased, _ = read_rawvol(d / "diseased.rawvol")
        mask_v = Volume(mask, name=entry["id"] + "_mask")
        image = Volume(void_region(diseased, mask), name=entry["id"] + "_image")
        samples.append(MaskedSample(
            image=image,
            mask=mask_v,
            target=Volume(healthy, name=entry["id"] + "_healthy"),
        ))
    return samples, manifest
