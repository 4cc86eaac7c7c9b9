"""Exception types shared across the package."""


class TristreamError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(TristreamError, ValueError):
    """Tensor or map dimensions are inconsistent with the operation."""


class ContractError(TristreamError, ValueError):
    """A documented precondition was violated (non-scalar loss, negative epoch, ...)."""


class NonFiniteError(TristreamError, ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


class InsufficientDataError(TristreamError, ValueError):
    """Not enough samples for the operation (batch norm with N < 2, k-means with fewer points than clusters)."""


class DegenerateInputError(TristreamError, ValueError):
    """Input carries no usable signal (all-zero feature map, zero-norm descriptor, map too small to erase)."""


class InvalidBoxError(TristreamError, ValueError):
    """A crop box is empty or outside the image."""


class ManifestError(TristreamError, ValueError):
    """Dataset manifest is missing, malformed, or inconsistent with the files on disk."""


class ConfigError(TristreamError, ValueError):
    """Run configuration is invalid."""


class MetricError(TristreamError, ValueError):
    """A retrieval metric is undefined for the given query/gallery sets."""


class CheckpointError(TristreamError, ValueError):
    """Checkpoint file is corrupt or incompatible."""


class TrainingDivergedError(TristreamError, RuntimeError):
    """Training hit a non-finite loss; diagnostics were dumped."""
