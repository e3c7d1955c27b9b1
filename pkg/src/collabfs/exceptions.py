"""Exception types raised across the package."""


class CollabFSError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(CollabFSError, ValueError):
    pass


class NotPositiveDefinite(CollabFSError, ArithmeticError):
    pass


class RankTooLarge(CollabFSError, ValueError):
    pass


class EmptyMatrix(CollabFSError, ValueError):
    pass


class ParseError(CollabFSError, ValueError):
    """Malformed input line; ``lineno`` is 1-based."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}"
            if lineno is not None:
                where += f":{lineno}"
            where += ": "
        super().__init__(where + message)


class EmptyDataset(CollabFSError, ValueError):
    pass


class EmptyFeatureSpace(CollabFSError, ValueError):
    pass


class UnknownItem(CollabFSError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown item"


class AlphaOutOfRange(CollabFSError, ValueError):
    pass


class SingularStart(CollabFSError, ArithmeticError):
    pass


class MaxItersExceeded(UserWarning):
    """Warning category: square MaxVol stopped before reaching dominance."""


class NSelectOutOfRange(CollabFSError, ValueError):
    pass


class NonFiniteLoss(CollabFSError, ArithmeticError):
    pass


class TooFewItems(CollabFSError, ValueError):
    pass


class ConfigError(CollabFSError, ValueError):
    pass
