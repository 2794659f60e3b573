"""Exception hierarchy shared by every subpackage."""


class SipMambaError(Exception):
    pass


class ContractError(SipMambaError, ValueError):
    """A precondition on the arguments of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(SipMambaError, ArithmeticError):
    """A non-finite value appeared in an op output while finite checks are on."""


class CoverageError(SipMambaError):
    """A scan trajectory failed to visit every cell of its quadrant exactly once."""
