"""Conditional patch discriminator.

Scores (condition, candidate) slice pairs with a spatial map, one score
per receptive patch rather than a single scalar. The default stack is
three stride-2 convolutions plus an unpadded 3x3 head, mapping 96x96
input to a 10x10 score map.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..nn import Conv, InstanceNorm, Module, ModuleList, ops


@dataclass(frozen=True)
class PatchDiscriminatorConfig:
    layers: int = 3        # stride-2 convolutions before the head
    base_width: int = 16
    in_channels: int = 2   # condition + candidate

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one conv layer")


def score_map_extent(size: int, layers: int) -> int:
    """Spatial extent of the score map by the conv shape law."""
    for _ in range(layers):
        size = (size + 2 * 1 - 4) // 2 + 1
    return size - 3 + 1  # unpadded 3x3 head, stride 1


def receptive_patch(layers: int) -> int:
    """Input pixels seen by one output score."""
    rf = 3
    for _ in range(layers):
        rf = rf * 2 + 2
    return rf


class PatchDiscriminator(Module):
    def __init__(self, config: PatchDiscriminatorConfig, rng, dtype=np.float32):
        super().__init__()
        self.config = config
        w = config.base_width
        convs, norms = [], []
        cin = config.in_channels
        for i in range(config.layers):
            cout = w * 2 ** min(i, 3)
            convs.append(Conv(2, cin, cout, 4, rng, stride=2, padding=1, dtype=dtype))
            norms.append(InstanceNorm(cout, dtype=dtype) if i > 0 else None)
            cin = cout
        self.convs = ModuleList(convs)
        self._norms = [n for n in norms if n is not None]
        for i, n in enumerate(self._norms):
            setattr(self, f"norm{i}", n)
        self.head = Conv(2, cin, 1, 3, rng, stride=1, padding=0, dtype=dtype)

    def __call__(self, condition, candidate):
        if condition.shape != candidate.shape:
            raise ShapeMismatch(
                f"condition {condition.shape} vs candidate {candidate.shape}")
        x = ops.concat([condition, candidate], axis=1)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i > 0:
                x = self._norms[i - 1](x)
            x = ops.leaky_relu(x, 0.2)
        return self.head(x)
