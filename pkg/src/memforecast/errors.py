"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``ConfigError`` and usage problems exit
with 1, ``FormatError``/``ProtocolError`` (bad data) with 2, and
``NumericalError`` with 3.
"""


class MemforecastError(Exception):
    """Base class for all library errors."""


class DimensionError(MemforecastError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MemforecastError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(MemforecastError, ValueError):
    """Invalid model, training, grammar or protocol configuration."""


class FormatError(MemforecastError, ValueError):
    """A file on disk is malformed."""


class ProtocolError(MemforecastError, ValueError):
    """An evaluation window cannot be formed for a sequence."""


class NumericalError(MemforecastError, ArithmeticError):
    """Non-finite values, or a failed gradient check."""


class EvaluationError(NumericalError):
    """A function under gradient check returned a non-finite value."""


class TrainingError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
