"""Domain errors raised by the diamondlab core.

The HTTP layer maps every ``DiamondLabError`` to a 400 response and the CLI
exits with status 2 on them.
"""


class DiamondLabError(Exception):
    """Base class for all domain errors."""


class InvalidLattice(DiamondLabError, ValueError):
    pass


class RegimeError(DiamondLabError, ValueError):
    """Operation requested outside its (b, s) regime, e.g. a b<s law with b >= s."""


class CapExceeded(DiamondLabError, ValueError):
    pass


class OutOfRange(DiamondLabError, ValueError):
    """Argument outside its admissible range, such as a β where the cgf is infinite."""


class AddressMismatch(DiamondLabError, ValueError):
    pass


class AddressOverflow(DiamondLabError, ValueError):
    """Address ranks at this depth do not fit the 128-bit field key."""


class DepthTooLarge(DiamondLabError, ValueError):
    pass


class DisorderSpecError(DiamondLabError, ValueError):
    pass


class LengthMismatch(DiamondLabError, ValueError):
    pass


class VariantMismatch(DiamondLabError, ValueError):
    pass


class AtOrBeyondCritical(DiamondLabError, ValueError):
    pass


class ToleranceNotReached(DiamondLabError, RuntimeError):
    pass


class NoBlowUpDetected(DiamondLabError, RuntimeError):
    pass
