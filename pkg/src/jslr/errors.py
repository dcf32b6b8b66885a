"""Exception and warning types shared across the package."""


class JSLRError(Exception):
    """Base class for all package errors."""


class InvalidSpec(JSLRError, ValueError):
    pass


class InvalidDims(JSLRError, ValueError):
    pass


class DimMismatch(JSLRError, ValueError):
    pass


class InvalidParams(JSLRError, ValueError):
    pass


class ZeroMatrix(JSLRError, ValueError):
    pass


class PartitionMismatch(JSLRError, ValueError):
    pass


class EmptyMeasurements(JSLRError, ValueError):
    pass


class NotOrthonormal(JSLRError, ValueError):
    pass


class InvalidImageSide(JSLRError, ValueError):
    pass


class TooLarge(JSLRError, ValueError):
    """Raised when a brute-force oracle would exceed its combinatorial guard."""


class ConfigError(JSLRError, ValueError):
    pass


class FormatError(JSLRError, ValueError):
    """Malformed JSLR container."""


class RankDeficient(UserWarning):
    """A requested rank exceeds the numerical rank of the data."""


class NotConverged(UserWarning):
    """An iterative solver stopped on its iteration cap."""
