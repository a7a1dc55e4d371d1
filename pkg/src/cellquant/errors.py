"""Exception types shared across the pipeline."""


class CellquantError(Exception):
    """Base class for all errors raised by this package."""


class StackReadError(CellquantError):
    """A TIFF stack is missing, unreadable, or violates the single-channel layout."""


class MaskFormatError(CellquantError):
    """A mask file or RLE document is malformed or inconsistent with the image."""


class ExternalSegmenterError(CellquantError):
    """The external segmenter command failed or produced no usable output."""


class UnmeasurableWidthError(CellquantError):
    """The middle sections of a fitted box contain no mask pixels."""


class AnnotationError(CellquantError):
    """An annotation file is malformed or unusable for evaluation."""


class SynthesisError(CellquantError):
    """Synthetic field generation could not satisfy the placement constraints."""


class ConfigError(CellquantError):
    """A configuration file or override could not be parsed or validated."""
