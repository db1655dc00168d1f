"""Shared exception types."""


class OrderViolationError(ValueError):
    """Input that must be Morton-ascending arrived out of order.

    Raised by the builder, the front and the stream reader; almost always
    means the upstream sorter or file is broken.
    """


class IncompleteStreamError(RuntimeError):
    """The hierarchy was asked for its root while more than one subtree remains."""


class FormatError(ValueError):
    """A binary container failed magic/version/consistency checks."""


class DataError(ValueError):
    """Malformed input data (bad point record, non-finite coordinate, ...)."""
