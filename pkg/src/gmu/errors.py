"""Exception hierarchy.

Everything raised on bad input derives from :class:`GmuError`; the CLI maps
those to exit code 2.  :class:`InvariantViolation` signals a bug (exit 3).
"""


class GmuError(Exception):
    """Base class for data and usage errors."""


class InvariantViolation(Exception):
    """An internal consistency check failed."""


# numerical kernel
class NotPositiveDefinite(GmuError):
    pass


class AsymmetricInput(GmuError):
    pass


class DimensionMismatch(GmuError):
    pass


class EmptyInput(GmuError):
    pass


class AllNegativeInfinity(GmuError):
    pass


class InvalidProbability(GmuError):
    pass


class NegativeInput(GmuError):
    pass


class InvalidDegreesOfFreedom(GmuError):
    pass


class NotNormalized(GmuError):
    pass


# mixture fitting / ensembles
class MissingClass(GmuError):
    pass


class BadLabel(GmuError):
    pass


class SingularClass(GmuError):
    pass


class InsufficientSupport(GmuError):
    pass


class DegenerateDraw(GmuError):
    pass


# metrics
class LengthMismatch(GmuError):
    pass


# file formats
class BadMagic(GmuError):
    pass


class UnsupportedVersion(GmuError):
    pass


class VersionMismatch(GmuError):
    pass


class TruncatedPayload(GmuError):
    pass


class CorruptPayload(GmuError):
    pass


class MalformedScan(GmuError):
    pass


class InvalidSpec(GmuError):
    pass


class BadReport(GmuError):
    """A report CSV lacks required columns or holds unparsable values."""
