"""3D U-Net noise predictor for the conditional diffusion model.

Input is three channels (noisy volume, voided image, mask); the timestep
enters as a sinusoidal embedding projected per level and added after each
level's first convolution. Skip connections concatenate encoder features
into the decoder. Spatial size must be divisible by 2**depth.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..nn import Conv, ConvTranspose, Grid, Linear, Module, ModuleList, ops


@dataclass(frozen=True)
class DenoiserConfig:
    base_width: int = 8
    depth: int = 2
    embed_dim: int = 32
    in_channels: int = 3

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.embed_dim % 2:
            raise ValueError("embed_dim must be even")


def sinusoidal_embedding(t, dim: int, dtype=np.float32) -> np.ndarray:
    """(B,) integer timesteps -> (B, dim) sin/cos features."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1).astype(dtype)


class LevelBlock(Module):
    """conv -> (+ timestep) -> relu -> conv -> relu, at fixed width."""

    def __init__(self, cin, cout, embed_dim, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv(3, cin, cout, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv(3, cout, cout, 3, rng, padding=1, dtype=dtype)
        self.temb = Linear(embed_dim, cout, rng, dtype=dtype)

    def __call__(self, x, emb):
        h = self.conv1(x)
        t = ops.reshape(self.temb(emb), h.shape[:2] + (1, 1, 1))
        h = ops.relu(ops.add(h, t))
        return ops.relu(self.conv2(h))


class UNet3D(Module):
    def __init__(self, config: DenoiserConfig = DenoiserConfig(), rng=None,
                 dtype=np.float32):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        w, d, e = config.base_width, config.depth, config.embed_dim
        self.embed_mlp = Linear(e, e, rng, dtype=dtype)

        enc, downs = [], []
        cin = config.in_channels
        for i in range(d):
            cout = w * 2 ** i
            enc.append(LevelBlock(cin, cout, e, rng, dtype))
            downs.append(Conv(3, cout, cout * 2, 3, rng, stride=2, padding=1, dtype=dtype))
            cin = cout * 2
        self.enc = ModuleList(enc)
        self.downs = ModuleList(downs)
        self.middle = LevelBlock(cin, cin, e, rng, dtype)

        ups, dec = [], []
        for i in reversed(range(d)):
            cout = w * 2 ** i
            ups.append(ConvTranspose(3, cin, cout, 4, rng, stride=2, padding=1, dtype=dtype))
            dec.append(LevelBlock(cout * 2, cout, e, rng, dtype))  # skip concat
            cin = cout
        self.ups = ModuleList(ups)
        self.dec = ModuleList(dec)
        self.head = Conv(3, cin, 1, 1, rng, dtype=dtype)

    def __call__(self, x, t):
        """x: (B, in_channels, D, H, W) Grid or array; t: (B,) timesteps."""
        if not isinstance(x, Grid):
            x = Grid(x)
        if x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected {self.config.in_channels} channels, got {x.shape[1]}")
        for n in x.shape[2:]:
            if n % 2 ** self.config.depth:
                raise ShapeMismatch(
                    f"spatial size {x.shape[2:]} not divisible by 2**depth")
        emb = ops.gelu(self.embed_mlp(Grid(
            sinusoidal_embedding(t, self.config.embed_dim, x.data.dtype))))

        skips = []
        for block, down in zip(self.enc, self.downs):
            x = block(x, emb)
            skips.append(x)
            x = down(x)
        x = self.middle(x, emb)
        for up, block, skip in zip(self.ups, self.dec, reversed(skips)):
            x = up(x)
            x = block(ops.concat([x, skip], axis=1), emb)
        return self.head(x)
