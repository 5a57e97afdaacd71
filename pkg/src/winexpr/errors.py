"""Exception types shared across the package."""


class WinexprError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(WinexprError):
    """Syntax error in predicate, regex, formula or config text."""

    def __init__(self, message: str, line: int = 1, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class MalformedPredicateError(WinexprError):
    """Predicate refers to variables or atoms outside the theory."""


class TheoryMismatchError(WinexprError):
    """Operands built over different theories were combined."""


class CapabilityError(WinexprError):
    """The theory does not support the requested operation."""


class BudgetExceededError(WinexprError):
    """A configured resource ceiling (minterms, out-degree, nodes) was hit."""


class PreconditionError(WinexprError):
    """An operation was called on inputs violating its contract."""


class InputTypeError(WinexprError):
    """A stream letter does not belong to the theory's domain."""


class InvariantViolation(WinexprError):
    """A runtime self-check of the processor state failed."""
