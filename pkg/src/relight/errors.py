"""Exception types shared across the toolkit."""


class FormatError(ValueError):
    """Malformed binary or image file.

    Attributes:
        offset: byte offset at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyRegionError(ValueError):
    """A metric or reduction was requested over an empty pixel region."""
