"""Exception hierarchy shared by every churnlab module."""


class ChurnlabError(Exception):
    """Base class for all errors raised by churnlab."""


class UsageError(ChurnlabError, ValueError):
    """Invalid arguments: bad shapes, out-of-range parameters, unknown keys."""


class ConfigError(UsageError):
    """Inconsistent configuration, e.g. a batch that does not fit the network."""


class ParseError(UsageError):
    """Malformed input file. ``line`` is 1-based and counts the header."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    """Input file with an inconsistent column layout."""


class NumericError(ChurnlabError, ArithmeticError):
    """Non-finite values during a forward pass or an optimizer update."""

    def __init__(self, message, step=None, layer=None):
        self.step = step
        self.layer = layer
        super().__init__(message)
