"""Slice inpainting generators.

One encoder / bottleneck / decoder body serves both adversarial models:
a stack of residual conv blocks in the bottleneck gives the plain
conditional-GAN generator, while a stack of ART blocks (a transformer
sub-module cascaded into a convolutional sub-module, with one residual
skip around the pair) gives the transformer-bottleneck variant. Both take
(masked slice, mask) as two input channels and emit an unbounded
single-channel slice, since z-scored targets are unbounded.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..nn import Conv, ConvTranspose, InstanceNorm, LayerNorm, Linear, Module, ModuleList, ops

RESIDUAL_BOTTLENECK = "residual-blocks"
ART_BOTTLENECK = "art-blocks"


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 2
    base_width: int = 16
    depth: int = 2
    bottleneck: str = RESIDUAL_BOTTLENECK
    blocks: int = 2            # residual or ART block count
    token_dim: int = 32        # ART attention width
    heads: int = 4
    patch: int = 8             # ART token patch edge (bottleneck pixels)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.bottleneck not in (RESIDUAL_BOTTLENECK, ART_BOTTLENECK):
            raise ValueError(f"unknown bottleneck {self.bottleneck!r}")
        if self.blocks < 1:
            raise ValueError("need at least one bottleneck block")
        if self.token_dim % self.heads:
            raise ValueError("token_dim must be divisible by heads")


class ResidualBlock(Module):
    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv(2, channels, channels, 3, rng, padding=1, dtype=dtype)
        self.norm1 = InstanceNorm(channels, dtype=dtype)
        self.conv2 = Conv(2, channels, channels, 3, rng, padding=1, dtype=dtype)
        self.norm2 = InstanceNorm(channels, dtype=dtype)

    def __call__(self, x):
        h = ops.relu(self.norm1(self.conv1(x)))
        return ops.add(x, self.norm2(self.conv2(h)))


class ArtBlock(Module):
    """Transformer sub-module then conv sub-module, residual skip around both.

    The bottleneck map is tokenized into patch x patch tiles (padded up to a
    multiple when needed), run through one pre-norm attention + MLP stage,
    projected back to a map, and refined by two 3x3 convolutions.
    """

    def __init__(self, channels, rng, token_dim=32, heads=4, patch=8, dtype=np.float32):
        super().__init__()
        self.patch = patch
        self.heads = heads
        self.token_dim = token_dim
        self.embed = Conv(2, channels, token_dim, patch, rng, stride=patch, dtype=dtype)
        self.ln_attn = LayerNorm(token_dim, dtype=dtype)
        scale = 1.0 / math.sqrt(token_dim)
        for name in ("wq", "wk", "wv", "wo"):
            self.param(name, (rng.standard_normal((token_dim, token_dim)) * scale).astype(dtype))
        self.ln_mlp = LayerNorm(token_dim, dtype=dtype)
        self.mlp_in = Linear(token_dim, 2 * token_dim, rng, dtype=dtype)
        self.mlp_out = Linear(2 * token_dim, token_dim, rng, dtype=dtype)
        self.detok = ConvTranspose(2, token_dim, channels, patch, rng, stride=patch, dtype=dtype)
        self.conv1 = Conv(2, channels, channels, 3, rng, padding=1, dtype=dtype)
        self.norm1 = InstanceNorm(channels, dtype=dtype)
        self.conv2 = Conv(2, channels, channels, 3, rng, padding=1, dtype=dtype)

    def _transformer(self, x):
        n, c, h, w = x.shape
        p = self.patch
        ph, pw = -h % p, -w % p
        t = ops.pad(x, [(0, 0), (0, 0), (0, ph), (0, pw)]) if (ph or pw) else x
        tok = self.embed(t)  # (N, D, gh, gw)
        gh, gw = tok.shape[2], tok.shape[3]
        seq = ops.transpose(ops.reshape(tok, (n, self.token_dim, gh * gw)), (0, 2, 1))
        seq = ops.add(seq, ops.self_attention(
            self.ln_attn(seq), self.wq, self.wk, self.wv, self.wo, self.heads))
        seq = ops.add(seq, self.mlp_out(ops.gelu(self.mlp_in(self.ln_mlp(seq)))))
        tok = ops.reshape(ops.transpose(seq, (0, 2, 1)), (n, self.token_dim, gh, gw))
        out = self.detok(tok)
        if ph or pw:
            out = ops.crop(out, (slice(None), slice(None), slice(0, h), slice(0, w)))
        return out

    def _conv_module(self, x):
        return self.conv2(ops.relu(self.norm1(self.conv1(x))))

    def __call__(self, x):
        return ops.add(x, self._conv_module(self._transformer(x)))


class Generator(Module):
    """Encoder - bottleneck - decoder inpainter over 2D slices."""

    def __init__(self, config: GeneratorConfig, rng, dtype=np.float32):
        super().__init__()
        self.config = config
        w = config.base_width
        self.stem = Conv(2, config.in_channels, w, 3, rng, padding=1, dtype=dtype)
        self.stem_norm = InstanceNorm(w, dtype=dtype)
        downs, down_norms = [], []
        for i in range(config.depth):
            cin, cout = w * 2 ** i, w * 2 ** (i + 1)
            downs.append(Conv(2, cin, cout, 3, rng, stride=2, padding=1, dtype=dtype))
            down_norms.append(InstanceNorm(cout, dtype=dtype))
        self.downs = ModuleList(downs)
        self.down_norms = ModuleList(down_norms)
        mid = w * 2 ** config.depth
        if config.bottleneck == RESIDUAL_BOTTLENECK:
            blocks = [ResidualBlock(mid, rng, dtype) for _ in range(config.blocks)]
        else:
            blocks = [ArtBlock(mid, rng, config.token_dim, config.heads,
                               config.patch, dtype) for _ in range(config.blocks)]
        self.blocks = ModuleList(blocks)
        ups, up_norms = [], []
        for i in reversed(range(config.depth)):
            cin, cout = w * 2 ** (i + 1), w * 2 ** i
            ups.append(ConvTranspose(2, cin, cout, 4, rng, stride=2, padding=1, dtype=dtype))
            up_norms.append(InstanceNorm(cout, dtype=dtype))
        self.ups = ModuleList(ups)
        self.up_norms = ModuleList(up_norms)
        self.head = Conv(2, w, 1, 3, rng, padding=1, dtype=dtype)

    def __call__(self, masked, mask):
        if masked.shape != mask.shape:
            raise ShapeMismatch(f"masked {masked.shape} vs mask {mask.shape}")
        for n in masked.shape[2:]:
            if n % 2 ** self.config.depth:
                raise ShapeMismatch(
                    f"spatial size {masked.shape[2:]} not divisible by "
                    f"2**depth = {2 ** self.config.depth}")
        x = ops.relu(self.stem_norm(self.stem(ops.concat([masked, mask], axis=1))))
        for down, norm in zip(self.downs, self.down_norms):
            x = ops.relu(norm(down(x)))
        for block in self.blocks:
            x = block(x)
        for up, norm in zip(self.ups, self.up_norms):
            x = ops.relu(norm(up(x)))
        return self.head(x)
