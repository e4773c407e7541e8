"""SSIM / PSNR / MSE over volumes, with masked regions and report tables.

SSIM uses a truncated Gaussian window (sigma 1.5; 7**3 for volumes,
11**2 for slices) renormalized to sum 1, evaluated over every window
fully inside the region bounding box. PSNR is capped at 100 dB so
aggregates stay finite. All accumulation is float64.
"""

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import (
    EmptyInput,
    EmptyMask,
    EmptyRegion,
    RegionTooSmall,
    ShapeMismatch,
    ZeroVariance,
)
from .volume_io import Volume

PSNR_CAP_DB = 100.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
WINDOW_3D = 7
WINDOW_2D = 11
WINDOW_SIGMA = 1.5

REGION_WHOLE = "whole-volume"
REGION_BBOX = "mask-bounding-box"
REGION_MASK = "mask-voxels"


@dataclass(frozen=True)
class MetricsResult:
    ssim: float
    psnr: float
    mse: float
    region: str
    data_range: float


@dataclass
class MetricsReport:
    label: str
    sample_ids: list = field(default_factory=list)
    results: list = field(default_factory=list)

    @property
    def means(self):
        return tuple(float(np.mean([getattr(r, k) for r in self.results]))
                     for k in ("ssim", "psnr", "mse"))

    @property
    def stds(self):
        # population std, matching the aggregation convention everywhere else
        return tuple(float(np.std([getattr(r, k) for r in self.results]))
                     for k in ("ssim", "psnr", "mse"))


def _as_array(x):
    return x.data if isinstance(x, Volume) else np.asarray(x)


def mse(pred, ref, region=None) -> float:
    """Mean squared difference over the region (or everywhere)."""
    p, r = _as_array(pred).astype(np.float64), _as_array(ref).astype(np.float64)
    if p.shape != r.shape:
        raise ShapeMismatch(f"pred {p.shape} vs ref {r.shape}")
    if region is not None:
        region = _as_array(region) > 0.5
        if region.shape != p.shape:
            raise ShapeMismatch(f"region {region.shape} vs pred {p.shape}")
        p, r = p[region], r[region]
        if p.size == 0:
            raise EmptyRegion("region selects no voxels")
    d = p - r
    return float(np.mean(d * d))


def psnr(pred, ref, region=None, data_range: float = None) -> float:
    """10*log10(L^2 / mse) in dB, capped at 100."""
    err = mse(pred, ref, region)
    if data_range is None:
        r = _as_array(ref).astype(np.float64)
        if region is not None:
            r = r[_as_array(region) > 0.5]
        data_range = float(r.max() - r.min())
    return psnr_from_mse(err, data_range)


def gaussian_window(extent: int, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """1D truncated Gaussian, renormalized to sum 1."""
    half = extent // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _local_means(arr: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable Gaussian-weighted means, trimmed to fully-interior windows."""
    out = arr
    for axis in range(arr.ndim):
        out = correlate1d(out, window, axis=axis, mode="constant")
    half = len(window) // 2
    inner = tuple(slice(half, n - half) for n in arr.shape)
    return out[inner]


def ssim(pred, ref, region=None, data_range: float = None, window: int = None) -> float:
    """Mean structural similarity over sliding Gaussian windows.

    Evaluated over the bounding box of the region (whole array when region
    is None). The box must be at least the window extent on every axis.
    """
    p, r = _as_array(pred).astype(np.float64), _as_array(ref).astype(np.float64)
    if p.shape != r.shape:
        raise ShapeMismatch(f"pred {p.shape} vs ref {r.shape}")
    if region is not None:
        region = _as_array(region) > 0.5
        if not region.any():
            raise EmptyRegion("region selects no voxels")
        idx = np.nonzero(region)
        box = tuple(slice(int(a.min()), int(a.max()) + 1) for a in idx)
        p, r = p[box], r[box]
    if window is None:
        window = WINDOW_3D if p.ndim == 3 else WINDOW_2D
    if min(p.shape) < window:
        raise RegionTooSmall(f"region box {p.shape} smaller than window {window}")
    if data_range is None:
        data_range = float(r.max() - r.min())
    if data_range <= 0:
        raise ZeroVariance("data_range must be positive for SSIM")

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    w = gaussian_window(window)
    mu_p = _local_means(p, w)
    mu_r = _local_means(r, w)
    e_pp = _local_means(p * p, w)
    e_rr = _local_means(r * r, w)
    e_pr = _local_means(p * r, w)
    var_p = e_pp - mu_p * mu_p
    var_r = e_rr - mu_r * mu_r
    cov = e_pr - mu_p * mu_r
    score = ((2 * mu_p * mu_r + c1) * (2 * cov + c2)) / (
        (mu_p * mu_p + mu_r * mu_r + c1) * (var_p + var_r + c2)
    )
    return float(score.mean())


def _expand_box(box, shape, extent: int):
    """Grow a bounding box to at least `extent` per axis, clamped in-bounds."""
    out = []
    for sl, n in zip(box, shape):
        lo, hi = sl.start, sl.stop
        need = extent - (hi - lo)
        if need > 0:
            lo = max(0, lo - (need + 1) // 2)
            hi = min(n, lo + extent)
            lo = max(0, hi - extent)
        if hi - lo < extent:
            raise RegionTooSmall(f"axis of size {n} cannot hold window {extent}")
        out.append(slice(lo, hi))
    return tuple(out)


def evaluate_sample(pred: Volume, ref: Volume, mask: Volume,
                    region: str = REGION_MASK) -> MetricsResult:
    """Score one inpainted volume against its reference.

    Default region mode: MSE/PSNR over mask voxels, SSIM over the mask
    bounding box (dilated to the window extent when needed), data_range
    from the reference over that box. Whole-volume mode ignores the mask
    for scoring but still requires it present.
    """
    if not (pred.shape == ref.shape == mask.shape):
        raise ShapeMismatch(
            f"shapes differ: {pred.shape}, {ref.shape}, {mask.shape}")
    m = mask.data > 0.5
    if not m.any():
        raise EmptyMask("mask has no set voxels")

    if region == REGION_WHOLE:
        box = tuple(slice(0, n) for n in pred.shape)
        err_sel = None
    elif region in (REGION_MASK, REGION_BBOX):
        idx = np.nonzero(m)
        box = tuple(slice(int(a.min()), int(a.max()) + 1) for a in idx)
        box = _expand_box(box, pred.shape, WINDOW_3D)
        err_sel = m if region == REGION_MASK else None
    else:
        raise ValueError(f"unknown region mode {region!r}")

    ref_box = ref.data[box].astype(np.float64)
    data_range = float(ref_box.max() - ref_box.min())
    if err_sel is not None:
        err = mse(pred.data, ref.data, err_sel)
    else:
        err = mse(pred.data[box], ref.data[box])
    peak = psnr_from_mse(err, data_range)
    struct = ssim(pred.data[box], ref.data[box], data_range=data_range)
    return MetricsResult(ssim=struct, psnr=peak, mse=err,
                         region=region, data_range=data_range)


def psnr_from_mse(err: float, data_range: float) -> float:
    if err == 0.0 or err < data_range * data_range * 1e-10:
        return PSNR_CAP_DB
    if data_range <= 0:
        raise ZeroVariance("data_range must be positive when mse > 0")
    return min(PSNR_CAP_DB, float(10.0 * np.log10(data_range * data_range / err)))


def aggregate(results, label: str, sample_ids=None) -> MetricsReport:
    """Fold per-sample results into a labelled report (population std)."""
    results = list(results)
    if not results:
        raise EmptyInput("no results to aggregate")
    ids = list(sample_ids) if sample_ids is not None else [
        f"sample_{i:03d}" for i in range(len(results))]
    return MetricsReport(label=label, sample_ids=ids, results=results)


def render_table(reports) -> str:
    """Aligned text table, one row per model: mean +/- std at 4 decimals."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("no reports to render")
    name_w = max(len("Model"), max(len(r.label) for r in reports))
    header = f"{'Model':<{name_w}}  {'SSIM':<19}  {'PSNR':<19}  {'MSE':<19}"
    lines = [header]
    for r in reports:
        means, stds = r.means, r.stds
        cells = [f"{m:.4f} ± {s:.4f}" for m, s in zip(means, stds)]
        lines.append(f"{r.label:<{name_w}}  " + "  ".join(f"{c:<19}" for c in cells))
    return "\n".join(lines) + "\n"


_ROW_RE = re.compile(
    r"^(?P<name>.+?)\s\s+"
    r"(?P<sm>-?\d+\.\d{4}) ± (?P<ss>-?\d+\.\d{4})\s+"
    r"(?P<pm>-?\d+\.\d{4}) ± (?P<ps>-?\d+\.\d{4})\s+"
    r"(?P<mm>-?\d+\.\d{4}) ± (?P<ms>-?\d+\.\d{4})\s*$"
)


def parse_table(text: str):
    """Inverse of render_table: rows of (label, means, stds)."""
    rows = []
    for line in text.splitlines()[1:]:
        if not line.strip():
            continue
        m = _ROW_RE.match(line)
        if m is None:
            raise ValueError(f"unparseable table row: {line!r}")
        rows.append((
            m["name"].strip(),
            (float(m["sm"]), float(m["pm"]), float(m["mm"])),
            (float(m["ss"]), float(m["ps"]), float(m["ms"])),
        ))
    return rows


def report_csv_rows(report: MetricsReport):
    """CSV payload: (sample_id, model, ssim, psnr_db, mse, region) rows."""
    rows = [("sample_id", "model", "ssim", "psnr_db", "mse", "region")]
    for sid, res in zip(report.sample_ids, report.results):
        rows.append((sid, report.label, f"{res.ssim:.6f}", f"{res.psnr:.6f}",
                     f"{res.mse:.6g}", res.region))
    return rows
