"""Exception types shared across the package."""


class DGCLError(Exception):
    """Base class for every error raised by dgcl."""


class DimensionError(DGCLError, ValueError):
    pass


class NumericError(DGCLError, ArithmeticError):
    pass


class ContractError(DGCLError, RuntimeError):
    """A caller broke an operation's precondition."""


class ConfigError(DGCLError, ValueError):
    pass


class ParseError(DGCLError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetError(DGCLError, ValueError):
    pass


class SamplingError(DGCLError, RuntimeError):
    pass


class CheckpointError(DGCLError, ValueError):
    pass


class TrainingError(DGCLError, RuntimeError):
    pass
