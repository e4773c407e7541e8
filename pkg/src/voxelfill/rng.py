"""Counter-based random streams.

All randomness in the package is drawn from Philox-4x64 (10 rounds), a
counter-based generator with fixed, published round constants, so that
any (seed, stream, step) triple yields the same bytes on every platform
and run. Streams partition the 256-bit counter space: each step owns a
2**128-wide block, far more draws than any step consumes.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream ids. Keep stable: they are part of reproducibility.
STREAM_PHANTOM = 0
STREAM_INIT_GEN = 1
STREAM_INIT_DISC = 2
STREAM_INIT_EXTRACTOR = 3
STREAM_INIT_DENOISER = 4
STREAM_TRAIN = 5
STREAM_SAMPLE = 6


def rng_stream(seed: int, stream: int, step: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream, step)."""
    key = (int(seed) & _MASK64) | ((int(stream) & _MASK64) << 64)
    bitgen = np.random.Philox(key=key, counter=int(step) << 128)
    return np.random.Generator(bitgen)
