"""Qualitative comparison grids as binary PGM (P5) images.

One tile per input volume: the selected slice, min-max scaled to 0-255
(uniform mid-gray for constant slices), separated by single white pixel
columns. PGM keeps the emitter free of image library dependencies.
"""

import numpy as np

from .errors import BadSliceIndex, EmptyInput, IoFailure, ShapeMismatch

_SEPARATOR = 255
_MIDGRAY = 128


def slice_tile(volume, index: int, axis: int = 2) -> np.ndarray:
    """One uint8 tile: the chosen slice min-max scaled to 0-255."""
    data = volume.data
    if axis not in (0, 1, 2):
        raise BadSliceIndex(f"axis must be 0, 1 or 2, got {axis}")
    if not (0 <= index < data.shape[axis]):
        raise BadSliceIndex(
            f"slice {index} outside axis {axis} of extent {data.shape[axis]}")
    plane = np.take(data, index, axis=axis).astype(np.float64)
    lo, hi = plane.min(), plane.max()
    if hi - lo <= 0:
        return np.full(plane.shape, _MIDGRAY, dtype=np.uint8)
    return np.clip(np.round((plane - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def write_montage(volumes, index: int, axis: int, out_path) -> None:
    """Write the slice-comparison grid for the given volumes."""
    volumes = list(volumes)
    if not volumes:
        raise EmptyInput("montage needs at least one volume")
    tiles = [slice_tile(v, index, axis) for v in volumes]
    shape0 = tiles[0].shape
    if any(t.shape != shape0 for t in tiles):
        raise ShapeMismatch("volumes disagree on slice shape")
    h, w = shape0
    grid = np.full((h, len(tiles) * w + (len(tiles) - 1)), _SEPARATOR, dtype=np.uint8)
    for i, t in enumerate(tiles):
        x0 = i * (w + 1)
        grid[:, x0:x0 + w] = t
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode()
    try:
        with open(out_path, "wb") as f:
            f.write(header + grid.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write montage {out_path}: {exc}") from exc
