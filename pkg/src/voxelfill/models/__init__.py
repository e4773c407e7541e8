"""The three inpainting model families and their training machinery."""

from .discriminator import (
    PatchDiscriminator,
    PatchDiscriminatorConfig,
    receptive_patch,
    score_map_extent,
)
from .extractor import PerceptualExtractor, PerceptualExtractorConfig, perceptual_loss
from .generator import (
    ART_BOTTLENECK,
    RESIDUAL_BOTTLENECK,
    ArtBlock,
    Generator,
    GeneratorConfig,
    ResidualBlock,
)
from .training import (
    BCE,
    LSGAN,
    LossWeights,
    TrainBatch,
    adversarial_d_loss,
    adversarial_g_loss,
    gan_train_step,
    pgan_loss,
    pixel_loss,
    resvit_loss,
)
from .unet3d import DenoiserConfig, UNet3D, sinusoidal_embedding

__all__ = [
    "Generator", "GeneratorConfig", "ResidualBlock", "ArtBlock",
    "RESIDUAL_BOTTLENECK", "ART_BOTTLENECK",
    "PatchDiscriminator", "PatchDiscriminatorConfig",
    "score_map_extent", "receptive_patch",
    "PerceptualExtractor", "PerceptualExtractorConfig", "perceptual_loss",
    "LossWeights", "TrainBatch", "LSGAN", "BCE",
    "pgan_loss", "resvit_loss", "pixel_loss",
    "adversarial_d_loss", "adversarial_g_loss", "gan_train_step",
    "DenoiserConfig", "UNet3D", "sinusoidal_embedding",
]
