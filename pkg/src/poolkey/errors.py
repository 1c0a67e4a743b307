"""Exception types shared across the package."""


class PoolError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(PoolError):
    """Invalid pool configuration (lane count, course length, or combination)."""


class ValidationError(PoolError):
    """A value or document violates its schema or an invariant."""


class OutOfBoundsError(ValidationError):
    """A coordinate falls outside the grid it is being placed on."""


class ShapeError(PoolError):
    """Array dimensions do not match what the operation expects."""


class NumericError(PoolError):
    """Non-finite or otherwise unusable numeric input."""


class FormatError(PoolError):
    """Malformed file: volume binary, annotation XML, or JSON."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ProjectiveError(PoolError):
    """Projection is undefined because the point maps to infinity."""


class DegeneracyError(PoolError):
    """Constraint system is rank-deficient; no unique homography exists."""


class InsufficientConstraintsError(DegeneracyError):
    """Fewer constraint equations than the eight a homography needs.

    A special case of degeneracy: too few equations is rank deficiency
    that can be diagnosed by counting alone.
    """


class NoModelError(PoolError):
    """RANSAC exhausted its iteration budget without a usable consensus."""


class SamplingError(PoolError):
    """Rejection sampling exceeded its retry budget."""
