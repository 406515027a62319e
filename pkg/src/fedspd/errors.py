"""Exception types shared across the simulator."""


class InvalidParameterError(ValueError):
    """An argument violates an operation's precondition."""


class GenerationError(RuntimeError):
    """A random generator could not satisfy its constraints within budget."""


class DivergenceError(FloatingPointError):
    """SGD produced non-finite parameters."""

    def __init__(self, message, step=None, client=None):
        super().__init__(message)
        self.step = step
        self.client = client


class ProtocolError(RuntimeError):
    """The protocol reached a state it cannot continue from."""


class NotApplicableError(ValueError):
    """A diagnostic was requested where its inputs are undefined."""


class UndefinedRateError(ValueError):
    """Consensus rate requested for a series already at consensus."""


class ConfigError(ValueError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ConfigValidationError(ConfigError):
    def __init__(self, field, constraint):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint


class UnknownKeyError(ConfigError):
    def __init__(self, key):
        super().__init__(f"unknown config key: {key}")
        self.key = key
