"""Exception hierarchy shared by all biasforge modules.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class BiasForgeError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(BiasForgeError):
    """Bad invocation: unknown config key, invalid flag value, bad argument."""


class DataError(BiasForgeError):
    """Malformed or missing input data (files, manifests, images)."""


class NumericError(BiasForgeError):
    """Non-finite loss or gradient encountered during training."""


class ImageFileMissing(DataError):
    """The referenced image file does not exist."""


class UnsupportedImageFormat(DataError):
    """The file exists but is not an 8-bit PNG or JPEG."""


class CorruptImageData(DataError):
    """The file claims a supported format but cannot be decoded."""


class RangeTagError(BiasForgeError):
    """An operation received an image in the wrong value range."""


class ShapeError(BiasForgeError):
    """Mismatched or unsupported image/batch dimensions."""


class ManifestFormatError(DataError):
    """Attribute manifest text violates the CelebA list layout."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
