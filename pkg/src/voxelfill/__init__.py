"""voxelfill: desk-scale 3D brain tumor inpainting.

Masked-volume ingestion, preprocessing, three generative inpainters
(conditional GAN, transformer-bottleneck GAN, 3D conditional diffusion),
masked recomposition, and SSIM/PSNR/MSE evaluation.
"""

from .diffusion import NoiseSchedule, make_schedule, p_sample_step, q_sample, sample
from .metrics import (
    MetricsReport,
    MetricsResult,
    aggregate,
    evaluate_sample,
    mse,
    parse_table,
    psnr,
    render_table,
    ssim,
)
from .phantom import PhantomSpec, generate_dataset, generate_phantom
from .preprocess import (
    CropWindow,
    MaskedSample,
    MinMaxStats,
    ZScoreStats,
    compose_output,
    crop_about_mask,
    extract_slices,
    minmax_invert,
    minmax_normalize,
    paste_crop,
    reassemble_slices,
    zscore_invert,
    zscore_normalize,
)
from .volume_io import NiftiHeader, Volume, read_mask, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "Volume", "NiftiHeader", "read_volume", "write_volume", "read_mask",
    "ZScoreStats", "MinMaxStats", "CropWindow", "MaskedSample",
    "zscore_normalize", "zscore_invert", "minmax_normalize", "minmax_invert",
    "extract_slices", "reassemble_slices", "crop_about_mask", "paste_crop",
    "compose_output",
    "NoiseSchedule", "make_schedule", "q_sample", "p_sample_step", "sample",
    "MetricsResult", "MetricsReport", "mse", "psnr", "ssim",
    "evaluate_sample", "aggregate", "render_table", "parse_table",
    "PhantomSpec", "generate_phantom", "generate_dataset",
    "__version__",
]
