"""Exception hierarchy.

Every data-level failure raised by the library derives from
:class:`DistillError`, which the CLI maps to exit code 1.
"""

from __future__ import annotations


class DistillError(Exception):
    """Base class for all data/validation errors."""


# -- tensor files and containers ---------------------------------------------

class BadMagic(DistillError):
    pass


class VersionUnsupported(DistillError):
    pass


class SizeMismatch(DistillError):
    pass


class NormViolation(DistillError, ValueError):
    def __init__(self, message: str, index: int | tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


class IndexGap(DistillError, ValueError):
    pass


class IoFailure(DistillError, OSError):
    pass


class DimensionMismatch(DistillError, ValueError):
    pass


class PatchCountMismatch(DistillError, ValueError):
    pass


class ConfigError(DistillError, ValueError):
    pass


# -- algorithms ---------------------------------------------------------------

class NonPositiveAlpha(ConfigError):
    pass


class KExceedsN(ConfigError):
    pass


class StreamExhausted(DistillError):
    pass


class EmptyGrid(ConfigError):
    pass


# -- profiler -----------------------------------------------------------------

class NormalizationViolation(DistillError, ValueError):
    pass


class AllZero(DistillError, ValueError):
    pass


class TooFewFrames(DistillError, ValueError):
    pass


class KTopExceedsN(ConfigError):
    pass


# -- benchmark / synthetic data -----------------------------------------------

class CatalogTooSmall(DistillError):
    pass


class SourceTooShort(DistillError, ValueError):
    pass


class UnknownCaseId(DistillError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class InvalidFractions(ConfigError):
    pass
