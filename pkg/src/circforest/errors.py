"""Exception hierarchy.

Every exception carries a short ``category`` string which the command line
interface reports in its machine-readable error output.
"""


class CircForestError(Exception):
    category = "error"


class EstimationError(CircForestError, ValueError):
    """Raised when a distribution cannot be estimated (e.g. all weights zero)."""

    category = "estimation"


class InsufficientDataError(CircForestError, ValueError):
    category = "insufficient_data"


class RoutingError(CircForestError, ValueError):
    """Raised when an observation cannot be sent down a tree."""

    category = "routing"


class DataError(CircForestError, ValueError):
    """Malformed input data (unparseable rows, duplicate timestamps, ...)."""

    category = "data"


class ModelFormatError(CircForestError, ValueError):
    category = "model_format"
