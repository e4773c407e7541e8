"""Frozen feature extractor for the perceptual loss term.

A fixed-seed random convolutional stack stands in for a pre-trained
backbone: random frozen features are a serviceable perceptual proxy at
desk scale, and externally supplied weights can be loaded through the
checkpoint container for fidelity runs. Parameters are never updated.
"""

from dataclasses import dataclass

import numpy as np

from ..nn import Conv, Module, ModuleList, ops
from ..rng import STREAM_INIT_EXTRACTOR, rng_stream


@dataclass(frozen=True)
class PerceptualExtractorConfig:
    widths: tuple = (8, 16, 16, 16)
    taps: tuple = (2, 4)   # 1-indexed layers whose activations are compared
    seed: int = 1234

    def __post_init__(self):
        if any(t < 1 or t > len(self.widths) for t in self.taps):
            raise ValueError(f"taps {self.taps} outside layer range")


class PerceptualExtractor(Module):
    def __init__(self, config: PerceptualExtractorConfig = PerceptualExtractorConfig(),
                 dtype=np.float32):
        super().__init__()
        self.config = config
        rng = rng_stream(config.seed, STREAM_INIT_EXTRACTOR)
        convs = []
        cin = 1
        for w in config.widths:
            convs.append(Conv(2, cin, w, 3, rng, padding=1, dtype=dtype))
            cin = w
        self.convs = ModuleList(convs)
        self.freeze()

    def features(self, x):
        """Activations at the tap layers."""
        taps = []
        for i, conv in enumerate(self.convs, start=1):
            x = ops.relu(conv(x))
            if i in self.config.taps:
                taps.append(x)
        return taps


def perceptual_loss(extractor: PerceptualExtractor, pred, target):
    """Mean absolute tap-activation difference, averaged over taps."""
    fp = extractor.features(pred)
    ft = extractor.features(target)
    total = None
    for a, b in zip(fp, ft):
        term = ops.mean(ops.absolute(ops.sub(a, b)))
        total = term if total is None else ops.add(total, term)
    return ops.mul(total, 1.0 / len(fp))
