"""Exception taxonomy shared across the package."""


class DeltaFlowError(Exception):
    """Base class for all package-specific errors."""


class InvalidDimensionError(DeltaFlowError, ValueError):
    """An extent list is empty or contains a non-positive extent."""


class ShapeMismatchError(DeltaFlowError, ValueError):
    """Two grids that must share dims do not."""


class TimeDomainError(DeltaFlowError, ValueError):
    """A time argument falls outside [0, horizon]."""


class UnsupportedFamilyError(DeltaFlowError, ValueError):
    """The operation is undefined for this schedule family."""


class UnknownConditionError(DeltaFlowError, ValueError):
    """Condition label not present in the model's condition table."""


class TrajectoryExhaustedError(DeltaFlowError, RuntimeError):
    """An edit step was requested after the time grid reached zero."""


class SingularTimeError(DeltaFlowError, ValueError):
    """Operation requires sigma(t) > 0 but was called at t = 0."""


class ParameterError(DeltaFlowError, ValueError):
    """A scalar parameter is outside its documented range."""


class DatasetError(DeltaFlowError, ValueError):
    """Synthetic dataset request is empty or names an unknown kind."""


class LayerIndexError(DeltaFlowError, IndexError):
    """Requested capture layer does not exist in the network."""


class TokenIndexError(DeltaFlowError, IndexError):
    """Requested text-token index is outside the embedding rows."""


class MaskRegionError(DeltaFlowError, ValueError):
    """The region a metric should be computed over is empty."""


class InsufficientFramesError(DeltaFlowError, ValueError):
    """A temporal metric needs at least two frames."""


class GeometryError(DeltaFlowError, ValueError):
    """Source video geometry does not match the model geometry."""


class CodecError(DeltaFlowError, ValueError):
    """A binary tensor or image file is malformed."""


class ConfigError(DeltaFlowError, ValueError):
    """Configuration file problem; carries the offending key and line."""

    def __init__(self, message: str, *, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        detail = message
        if key is not None:
            detail += f" (key: {key})"
        if line is not None:
            detail += f" (line {line})"
        super().__init__(detail)
