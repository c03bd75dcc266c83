"""Exception types shared across the package."""


class UnwarpError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(UnwarpError, ValueError):
    """Invalid geometric input (bad dimensions, non-finite values, ...)."""


class SingularTransformError(GeometryError):
    """Transform is not invertible within the configured determinant floor."""


class DegenerateGeometryError(GeometryError):
    """Point configuration too degenerate for the requested fit."""


class FormatError(UnwarpError, ValueError):
    """Malformed serialized payload (dimensions, finiteness, truncation)."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class EmptyLineSetError(UnwarpError, ValueError):
    """Operation requires at least one line segment."""


class PredictorError(UnwarpError, RuntimeError):
    """A grid predictor failed to produce a usable grid."""


class MetricError(UnwarpError, ValueError):
    """Metric cannot be evaluated on the given inputs."""


class DimensionMismatchError(UnwarpError, ValueError):
    """Inputs that must share dimensions do not."""


class DistortionSpecError(UnwarpError, ValueError):
    """Synthetic distortion specification violates its constraints."""


class NewtonDivergenceError(UnwarpError, RuntimeError):
    """Iterative map inversion failed to converge."""
