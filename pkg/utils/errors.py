"""Error types raised by the caliper library.

Every error carries its class name so the CLI and the API can report it
verbatim (e.g. ``EmptyMask: mask has no head pixels``).
"""


class CaliperError(ValueError):
    """Base class for all library errors."""

    @property
    def name(self) -> str:
        return type(self).__name__

    def describe(self) -> str:
        message = str(self)
        return f'{self.name}: {message}' if message else self.name


# geometry
class DegenerateConfiguration(CaliperError):
    pass


class TooFewPoints(DegenerateConfiguration):
    pass


class NotAnEllipse(CaliperError):
    pass


class NonPositivePixelSize(CaliperError):
    pass


# raster
class EmptyMask(CaliperError):
    pass


class DimensionMismatch(CaliperError):
    pass


# annotation
class NoAnnotationFound(CaliperError):
    pass


class CropOutOfBounds(CaliperError):
    pass


# segnet
class ShapeMismatch(CaliperError):
    pass


class OddDimension(ShapeMismatch):
    pass


class DimensionNotDivisible(CaliperError):
    pass


class EmptyDataset(CaliperError):
    pass


# phantom / shared
class InvalidParams(CaliperError):
    pass


# study
class MissingRater(CaliperError):
    pass


class InsufficientData(CaliperError):
    pass


# file formats
class InvalidFileFormat(CaliperError):
    pass
