"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class PoseforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(PoseforgeError):
    """Invalid or inconsistent configuration."""


class DataError(PoseforgeError):
    """Malformed input data (schema violations, bad files, missing keys)."""


class NumericError(PoseforgeError):
    """Numerical failure: NaN losses, degenerate geometry, invalid rotations."""


class InvalidRotationError(NumericError):
    """Matrix fails the rotation-matrix invariants beyond tolerance."""


class DegenerateGeometryError(NumericError):
    """Joint set too degenerate (collinear/coincident) for the requested op."""
