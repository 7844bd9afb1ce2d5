class ParameterError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


class ParseError(ValueError):
    """CSV or config text could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ValidationError(ValueError):
    """A parsed series violates its range or ramp invariants."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class InfeasibleError(RuntimeError):
    """A model instance has no feasible solution."""

    def __init__(self, message, hour=None, constraint=None):
        self.hour = hour
        self.constraint = constraint
        super().__init__(message)


class ConfigError(ValueError):
    pass
