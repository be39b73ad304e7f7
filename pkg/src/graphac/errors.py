"""Exception hierarchy shared by every graphac module."""


class GraphACError(Exception):
    """Base class for all errors raised by graphac."""


class DimensionError(GraphACError, ValueError):
    """Operand shapes do not conform to an operation's algebraic rule."""


class DegenerateScaleError(GraphACError, ArithmeticError):
    """A column with (numerically) zero spread cannot be scaled to unit std."""


class ContractError(GraphACError, ValueError):
    """A documented precondition of an operation was violated."""


class NonFiniteError(GraphACError, FloatingPointError):
    """An operation produced NaN or Inf."""


class GraphValidationError(GraphACError, ValueError):
    """A graph violates its structural invariants."""


class GraphParseError(GraphACError, ValueError):
    """A graph file line could not be decoded."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SpecValidationError(GraphACError, ValueError):
    """A ModelSpec (or config) contains an invalid combination of fields."""

    def __init__(self, message, fields=()):
        self.fields = tuple(fields)
        super().__init__(message)


class ConfigError(GraphACError, ValueError):
    """A run configuration is malformed; `key_path` names the offending entry."""

    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class MatchCollapsed(GraphACError, RuntimeError):
    """Training diverged or collapsed; carries the epoch where it happened."""

    def __init__(self, message, epoch=None, seed=None):
        self.epoch = epoch
        self.seed = seed
        super().__init__(message)
