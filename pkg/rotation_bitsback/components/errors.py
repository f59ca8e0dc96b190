"""Exception hierarchy shared by every component.

Library code raises these; only the CLI turns them into exit codes.
"""


class BitsBackError(Exception):
    """Base class for all codec errors."""


class NumericalError(BitsBackError):
    """A numerical routine could not produce a trustworthy result."""


class NonSymmetric(NumericalError):
    """Input to the symmetric eigensolver is not symmetric."""


class NonFinite(NumericalError):
    """A matrix handed to a numerical routine contains NaN or infinity."""


class NoConvergence(NumericalError):
    """The Jacobi iteration did not reach its tolerance within the sweep budget."""


class ZeroRow(NumericalError):
    """RMSNorm met a row whose norm is effectively zero."""


class RankDeficient(NumericalError):
    """A weight gram matrix is too close to singular to define a canonical direction."""


class FormatError(BitsBackError):
    """A file or byte buffer does not follow the expected layout."""


class BadMagic(FormatError):
    """File magic does not match."""


class TruncatedFile(FormatError):
    """File ends before all declared content was read."""


class ShapeMismatch(FormatError):
    """Declared shapes disagree with the stored data."""


class BadContainer(FormatError):
    """An encoded container is internally inconsistent."""


class LengthMismatch(FormatError):
    """Declared bit length does not fit the supplied bytes."""


class Underflow(BitsBackError):
    """Pop requested more bits than the stack holds."""


class UsageError(BitsBackError):
    """Caller passed arguments outside the supported domain."""


class DimensionMismatch(UsageError):
    """Operands have incompatible shapes."""


class LayerOutOfRange(UsageError):
    """Layer index outside 1..L."""


class TokenOutOfRange(UsageError):
    """Token index outside the vocabulary or sequence too long."""


class InvalidConfig(UsageError):
    """Configuration values are outside their allowed range."""
