"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit code: usage problems exit 1, data and
format problems exit 2, training problems exit 3.
"""


class EmscaError(Exception):
    exit_code = 2


class ArgumentError(EmscaError, ValueError):
    exit_code = 1


class FormatError(EmscaError):
    """A file does not follow its binary or text layout."""


class SchemaError(FormatError):
    pass


class ConflictError(EmscaError):
    pass


class ShapeError(EmscaError, ValueError):
    pass


class DataError(EmscaError, ValueError):
    pass


class InsufficientDataError(DataError):
    pass


class ContractError(EmscaError):
    """Inputs are individually valid but cannot be combined."""


class TrainingError(EmscaError):
    exit_code = 3
