__all__ = [
    "NBVAEError",
    "ConfigurationError",
    "LoadError",
    "ContractError",
    "DimensionError",
    "NumericDomainError",
    "NumericAbort",
    "EvaluationError",
    "GradcheckFailure",
]


class NBVAEError(Exception):

    """Base for all errors raised by nbvae.

    Each error type carries the exit code the command line interface
    uses when the error reaches it.

    """

    exit_code = 1


class ConfigurationError(NBVAEError):

    """Invalid settings, paths, shapes, or variant/data combinations."""

    exit_code = 2


class LoadError(ConfigurationError):
    def __init__(self, path, line_number, detail):
        self.path = path
        self.line_number = line_number
        self.detail = detail
        super().__init__(f"{path}, line {line_number}: {detail}")


class ContractError(NBVAEError):

    """An API was used in a way its contract doesn't allow."""

    exit_code = 2


class DimensionError(ContractError):
    pass


class NumericDomainError(NBVAEError):

    """A value fell outside an operation's domain.

    Args:
        op: Name of the operation that rejected its input.
        index: Index of the first offending element.
        value: The offending value.

    """

    exit_code = 3

    def __init__(self, op, index=None, value=None, detail=None):
        self.op = op
        self.index = index
        self.value = value
        message = f"Numeric domain error in {op}"
        if index is not None:
            message = f"{message} at index {index} (value {value!r})"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class NumericAbort(NBVAEError):

    """Training hit a non-finite value and was stopped.

    The last state known to be finite is kept on the exception so the
    caller can still write it out.

    """

    exit_code = 3

    def __init__(self, message, parameter=None, last_good_state=None):
        self.parameter = parameter
        self.last_good_state = last_good_state
        super().__init__(message)


class EvaluationError(NBVAEError):
    exit_code = 2


class GradcheckFailure(NBVAEError):
    exit_code = 1

    def __init__(self, failing_ops):
        self.failing_ops = list(failing_ops)
        super().__init__(f"Gradient check failed for: {', '.join(self.failing_ops)}")
