"""Exception types shared across the toolkit."""


class BoundsError(ValueError):
    """A rectangle does not fit inside the image it is applied to."""


class ChannelMismatchError(ValueError):
    """Two pixel buffers disagree on channel count."""


class ImageFormatError(ValueError):
    """Unsupported image data (bad shape, dtype, or PNG mode)."""


class OracleError(RuntimeError):
    """Base class for classifier-oracle failures."""


class OracleProtocolError(OracleError):
    """The external oracle violated the neo-oracle/1 wire protocol."""


class OracleTimeoutError(OracleError):
    """The external oracle did not answer within the configured timeout."""


class OracleQueryError(OracleError):
    """A single query failed; carries the offending batch index when known."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class StreamAborted(RuntimeError):
    """The defence stream stopped early; carries the partial report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report
