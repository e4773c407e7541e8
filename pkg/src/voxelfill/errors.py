"""Exception hierarchy shared across the package.

Three coarse families drive CLI exit codes: configuration problems,
bad or missing data, and numeric failures during computation.
"""


class VoxelfillError(Exception):
    """Base class for all package errors."""


class ConfigError(VoxelfillError):
    """Invalid run configuration (schema violation, bad enum, missing path)."""


class DataError(VoxelfillError):
    """Problems with input data or files."""


class NumericError(VoxelfillError):
    """Numeric failure during computation."""


# ---------------------------------------------------------------- volume I/O

class IoFailure(DataError):
    """Underlying OS-level read/write failure."""


class BadMagic(DataError):
    """File is not NIfTI-1 / rawvol (wrong magic or header size)."""


class UnsupportedHeader(DataError):
    """Valid NIfTI but outside the supported subset (dims, qform, ...)."""


class UnsupportedDatatype(DataError):
    """NIfTI datatype code outside {uint8, int16, float32}."""


class TruncatedFile(DataError):
    """File ends before the declared data payload does."""


class NonFiniteData(DataError):
    """Loaded intensities contain NaN or Inf."""


# --------------------------------------------------------------- shape/region

class ShapeMismatch(DataError):
    """Array dimensions disagree with what the operation requires."""


class EmptyMask(DataError):
    """Mask has no set voxels."""


class EmptyDomain(DataError):
    """Normalization domain selects fewer than two voxels."""


class EmptyRegion(DataError):
    """Metric region selects no voxels."""


class EmptyInput(DataError):
    """Aggregate called with no results."""


class RegionTooSmall(DataError):
    """Region bounding box smaller than the SSIM window."""


class MissingPair(DataError):
    """Evaluation found a prediction without its reference (or vice versa)."""


class BadSliceIndex(DataError):
    """Montage slice index outside the volume."""


class SpecInfeasible(DataError):
    """Phantom spec cannot be satisfied (tumor does not fit)."""


# ------------------------------------------------------------------- numeric

class ZeroVariance(NumericError):
    """Normalization domain has (near-)zero spread."""


class BadRange(NumericError):
    """Schedule parameters outside (0, 1) or inverted."""


class IndexOutOfRange(NumericError):
    """Diffusion timestep outside [0, T)."""


class NonScalarLoss(NumericError):
    """backward() called on a non-scalar grid."""


class NonFiniteLoss(NumericError):
    """Training produced NaN/Inf loss."""


class CheckpointMismatch(DataError):
    """Checkpoint format version or config hash does not match."""
