"""Exception hierarchy shared by the library and the CLI."""


class WallBayesError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(WallBayesError, ValueError):
    pass


class OutOfRangeError(WallBayesError, ValueError):
    pass


class NumericalFailureError(WallBayesError, ArithmeticError):
    pass


class ConvergenceError(WallBayesError, RuntimeError):
    """Tempering did not reach phi = 1 within the iteration cap.

    The partial :class:`~wallbayes.renka.TemperingTrace` is attached as
    ``trace`` so callers can report how far the iteration got.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(WallBayesError):
    """Malformed or inconsistent configuration; names the key and line when known."""

    def __init__(self, message, key=None, line=None, path=None):
        self.key, self.line, self.path = key, line, path
        super().__init__(message)

    def __str__(self):
        where = [f"{self.path}" if self.path else None,
                 f"line {self.line}" if self.line else None,
                 f"key {self.key!r}" if self.key else None]
        where = ", ".join(w for w in where if w)
        msg = super().__str__()
        return f"{where}: {msg}" if where else msg


class DataError(WallBayesError):
    """Input data violating the CSV schema; names the row and column when known."""

    def __init__(self, message, row=None, column=None):
        self.row, self.column = row, column
        super().__init__(message)
