"""Exception types shared across the package."""


class ActionSpaceError(Exception):
    """Base class for all package errors."""


class DimensionError(ActionSpaceError, ValueError):
    pass


class DomainError(ActionSpaceError, ValueError):
    """A primitive was evaluated outside its domain.

    ``index`` is the multi-index of the first offending element.
    """

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} at index {index}")
        self.index = index


class ContractError(ActionSpaceError, ValueError):
    """A caller violated a documented precondition."""


class NumericError(ActionSpaceError, ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InfeasibleTurnError(ActionSpaceError, ValueError):
    """A heading change is too sharp for the vehicle geometry."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigurationError(ActionSpaceError, ValueError):
    pass


class DataError(ActionSpaceError, ValueError):
    pass


class SchemaError(DataError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column
