"""Exception hierarchy for the extraction tool."""


class ExtractorError(Exception):
    """Base class for everything this package raises on purpose."""


class DatasetError(ExtractorError):
    """Dataset directory missing, empty, or not laid out as class folders."""


class EncoderError(ExtractorError):
    """Encoder runtime or pretrained weights unavailable, or bad output."""
