"""Exception types shared across the package."""


class SplitLabError(Exception):
    """Base class for all errors raised by splitlab."""


class ShapeError(SplitLabError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SplitLabError, ValueError):
    """A precondition of an operation was violated."""


class NonFiniteError(SplitLabError, FloatingPointError):
    """A forward computation produced NaN/Inf from finite inputs."""


class DivergenceError(SplitLabError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, defense=None, coefficient=None, epoch=None):
        super().__init__(message)
        self.defense = defense
        self.coefficient = coefficient
        self.epoch = epoch


class FramingError(SplitLabError, ValueError):
    """A binary log or checkpoint is truncated or malformed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ParseError(SplitLabError, ValueError):
    """An input file could not be parsed."""


class SchemaError(SplitLabError, ValueError):
    """An input file parsed but has the wrong columns or value types."""
