"""Exception hierarchy and process exit codes"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class RelGraphError(Exception):
    """Base error; `exit_code` is what the CLI returns for it"""

    exit_code = EXIT_DATA


class ShapeError(RelGraphError, ValueError):
    """Operand dimensions do not line up"""

    exit_code = EXIT_DATA


class DegenerateInputError(RelGraphError, ValueError):
    """Zero-norm vector where a direction is required"""

    exit_code = EXIT_NUMERICAL


class ConfigError(RelGraphError, ValueError):
    """Invalid or unknown configuration value"""

    exit_code = EXIT_USAGE


class UsageError(RelGraphError):
    """Bad command-line usage"""

    exit_code = EXIT_USAGE


class DataError(RelGraphError, ValueError):
    """Dataset content is inconsistent (labels, ids, manifests)"""

    exit_code = EXIT_DATA


class FormatError(RelGraphError, ValueError):
    """Malformed tensor file; `offset` is the byte position of the fault"""

    exit_code = EXIT_DATA

    def __init__(self, message: str, offset: int = 0, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")
        self.offset = offset
        self.path = path


class ContractError(RelGraphError, RuntimeError):
    """A trace was reused or its parameters changed after the forward pass"""

    exit_code = EXIT_NUMERICAL


class NumericalFailure(RelGraphError, ArithmeticError):
    """Non-finite loss during training"""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, epoch: int = None, step: int = None):
        super().__init__(f"{message} (epoch {epoch}, step {step})")
        self.epoch = epoch
        self.step = step
