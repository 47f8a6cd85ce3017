"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class AspdError(Exception):
    exit_code = 1


class ContractError(AspdError, ValueError):
    """A precondition on arguments was violated."""

    exit_code = 2


class DimensionError(ContractError):
    pass


class ConfigError(ContractError):
    pass


class TapeError(ContractError):
    pass


class GatherIndexError(ContractError, IndexError):
    pass


class NumericError(AspdError, ArithmeticError):
    exit_code = 4


class FormatError(AspdError):
    exit_code = 3


class ParseError(FormatError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(FormatError):
    pass
